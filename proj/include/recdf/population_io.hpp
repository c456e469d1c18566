#pragma once

#include <string>

#include "recdf/csv.hpp"
#include "recdf/population.hpp"

namespace recdf {

// Complete-universe CSV: header row, one response column named by the caller,
// every other column a numeric covariate. Missing or non-numeric cells are
// hard errors here.
inline FinitePopulation load_population_csv(const CsvTable& table,
                                            const std::string& response_column) {
  const int resp = table.column(response_column);
  if (resp < 0) {
    throw ConfigError("population CSV lacks response column '" +
                      response_column + "'");
  }
  if (table.header.size() < 2) {
    throw ConfigError("population CSV has no covariate columns");
  }
  if (table.rows.empty()) {
    throw ValidationError("population CSV has no data rows");
  }
  FinitePopulation pop;
  pop.model_id = PopulationModel::External;
  const auto n = static_cast<Eigen::Index>(table.rows.size());
  pop.y.resize(n);
  pop.x.resize(n, static_cast<Eigen::Index>(table.header.size()) - 1);
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto& row = table.rows[static_cast<std::size_t>(r)];
    Eigen::Index k = 0;
    for (std::size_t c = 0; c < table.header.size(); ++c) {
      if (static_cast<int>(c) == resp) {
        pop.y(r) = parse_double(row[c]);
      } else {
        pop.x(r, k++) = parse_double(row[c]);
      }
    }
  }
  pop.validate();
  return pop;
}

inline FinitePopulation load_population_csv(const std::string& path,
                                            const std::string& response_column) {
  return load_population_csv(read_csv_file(path), response_column);
}

}  // namespace recdf
