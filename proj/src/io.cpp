#include "protokb/io.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "protokb/errors.hpp"

namespace protokb {

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw IoError("write failed for '" + path + "'");
}

std::vector<std::string> read_lines(const std::string& path) {
  std::vector<std::string> lines;
  std::istringstream in(read_text_file(path));
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

std::string format_double(double value) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& text) {
  double v = 0.0;
  auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc{} || res.ptr != text.data() + text.size()) {
    throw ParseError("not a number: '" + text + "'");
  }
  return v;
}

FeatureTable load_features_file(const std::string& path) {
  FeatureTable table;
  long width = -1;
  for (const auto& line : read_lines(path)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      auto tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    Eigen::VectorXd v(static_cast<long>(fields.size()) - 1);
    for (std::size_t i = 1; i < fields.size(); ++i) v[static_cast<long>(i) - 1] = parse_double(fields[i]);
    if (width >= 0 && v.size() != width) {
      throw ParseError("feature record '" + fields[0] + "' has width " + std::to_string(v.size()) +
                       ", expected " + std::to_string(width));
    }
    width = v.size();
    if (!table.emplace(fields[0], std::move(v)).second) {
      throw ParseError("duplicate feature record '" + fields[0] + "'");
    }
  }
  return table;
}

void save_features_file(const FeatureTable& features, const std::string& path) {
  std::string text;
  for (const auto& [id, v] : features) {
    text += id;
    for (long i = 0; i < v.size(); ++i) {
      text.push_back('\t');
      text += format_double(v[i]);
    }
    text.push_back('\n');
  }
  write_text_file(path, text);
}

}  // namespace protokb
