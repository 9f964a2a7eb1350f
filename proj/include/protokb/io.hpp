#pragma once

#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace protokb {

std::string read_text_file(const std::string& path);
/// Creates parent directories as needed. Throws IoError.
void write_text_file(const std::string& path, const std::string& text);
std::vector<std::string> read_lines(const std::string& path);

/// Shortest decimal form that round-trips to the same double.
std::string format_double(double value);
double parse_double(const std::string& text);

/// Synthetic image features: one record per line, "study_id<TAB>v1<TAB>v2...".
/// Every record must have the same width.
using FeatureTable = std::map<std::string, Eigen::VectorXd>;
FeatureTable load_features_file(const std::string& path);
void save_features_file(const FeatureTable& features, const std::string& path);

}  // namespace protokb
