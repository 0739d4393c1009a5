#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <regex>
#include <sstream>

#include <json.hpp>

#include "hpgmn/graph.hpp"
#include "hpgmn/io_util.hpp"

namespace hpgmn {
namespace fs = std::filesystem;

namespace {

[[noreturn]] void fail_at(const fs::path& file, std::size_t line, const std::string& what) {
  throw Error(file.string() + ":" + std::to_string(line) + ": " + what);
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

template <typename T>
bool parse_number(std::string_view text, T& out) {
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, out);
  return ec == std::errc() && ptr == end;
}

std::ifstream open_input(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw Error("missing file: " + file.string());
  return in;
}

std::vector<std::vector<double>> read_features(const fs::path& file) {
  auto in = open_input(file);
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto fields = split_fields(line);
    if (fields.empty()) continue;
    std::vector<double> row(fields.size());
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (!parse_number(fields[i], row[i])) fail_at(file, lineno, "cannot parse '" + std::string(fields[i]) + "'");
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      fail_at(file, lineno, "dimension mismatch: expected " + std::to_string(rows.front().size()) + " columns, got " +
                                std::to_string(row.size()));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<int> read_labels(const fs::path& file, std::size_t num_nodes) {
  auto in = open_input(file);
  std::vector<int> labels;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto fields = split_fields(line);
    if (fields.empty()) continue;
    int y = 0;
    if (fields.size() != 1 || !parse_number(fields[0], y) || y < -1) fail_at(file, lineno, "invalid label '" + line + "'");
    labels.push_back(y);
  }
  if (labels.size() != num_nodes) {
    fail_at(file, lineno, "dimension mismatch: " + std::to_string(labels.size()) + " labels for " +
                              std::to_string(num_nodes) + " feature rows");
  }
  return labels;
}

std::vector<Edge> read_edges(const fs::path& file, std::size_t num_nodes) {
  auto in = open_input(file);
  std::vector<Edge> edges;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto fields = split_fields(line);
    if (fields.empty()) continue;
    std::uint32_t u = 0, v = 0;
    if (fields.size() != 2 || !parse_number(fields[0], u) || !parse_number(fields[1], v)) {
      fail_at(file, lineno, "expected two node ids, got '" + line + "'");
    }
    if (u >= num_nodes || v >= num_nodes) fail_at(file, lineno, "endpoint out of range");
    edges.emplace_back(u, v);
  }
  return edges;
}

std::vector<std::size_t> read_index_array(const nlohmann::json& doc, const char* key, const fs::path& file,
                                          std::size_t num_nodes) {
  if (!doc.contains(key) || !doc[key].is_array()) throw Error(file.string() + ": missing array '" + key + "'");
  std::vector<std::size_t> out;
  for (const auto& item : doc[key]) {
    if (!item.is_number_integer() || item.get<long long>() < 0 ||
        static_cast<std::size_t>(item.get<long long>()) >= num_nodes) {
      throw Error(file.string() + ": split index out of range in '" + key + "': " + item.dump());
    }
    out.push_back(item.get<std::size_t>());
  }
  return out;
}

std::vector<SplitSet> read_splits(const fs::path& dir, const Graph& g) {
  static const std::regex pattern(R"(split_(\d+)\.json)");
  std::map<std::size_t, fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    std::smatch m;
    const std::string name = entry.path().filename().string();
    if (std::regex_match(name, m, pattern)) files.emplace(std::stoul(m[1].str()), entry.path());
  }
  if (files.empty()) throw Error("missing file: no split_<k>.json in " + dir.string());

  std::vector<SplitSet> splits;
  for (const auto& [id, file] : files) {
    nlohmann::json doc;
    try {
      std::ifstream in(file);
      doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw Error(file.string() + ": " + e.what());
    }
    SplitSet s;
    s.split_id = id;
    s.train = read_index_array(doc, "train", file, g.num_nodes());
    s.val = read_index_array(doc, "val", file, g.num_nodes());
    s.test = read_index_array(doc, "test", file, g.num_nodes());
    try {
      s.validate(g);
    } catch (const Error& e) {
      throw Error(file.string() + ": " + e.what());
    }
    splits.push_back(std::move(s));
  }
  return splits;
}

}  // namespace

Dataset load_dataset(const fs::path& dir) {
  const auto features_file = dir / "features.tsv";
  const auto labels_file = dir / "labels.tsv";
  const auto edges_file = dir / "edges.tsv";
  for (const auto& f : {features_file, labels_file, edges_file}) {
    if (!fs::exists(f)) throw Error("missing file: " + f.string());
  }

  auto rows = read_features(features_file);
  const std::size_t n = rows.size();
  const std::size_t f = n == 0 ? 0 : rows.front().size();
  Matrix features(n, f);
  for (std::size_t v = 0; v < n; ++v) std::copy(rows[v].begin(), rows[v].end(), features.row(v).begin());
  rows.clear();

  auto labels = read_labels(labels_file, n);
  auto edges = read_edges(edges_file, n);
  int num_classes = 1;
  for (int y : labels) num_classes = std::max(num_classes, y + 1);

  Dataset ds;
  try {
    ds.graph = Graph(n, std::move(edges), std::move(features), std::move(labels), num_classes);
  } catch (const Error& e) {
    throw Error(dir.string() + ": " + e.what());
  }
  const auto split_dir = dir / "splits";
  ds.splits = fs::is_directory(split_dir) ? read_splits(split_dir, ds.graph) : random_splits(ds.graph, 10, 0);
  return ds;
}

void save_dataset(const Dataset& ds, const fs::path& dir) {
  fs::create_directories(dir / "splits");
  const Graph& g = ds.graph;

  std::ostringstream edges;
  for (const auto& [u, v] : g.edges()) edges << u << '\t' << v << '\n';
  write_file_atomic(dir / "edges.tsv", edges.str());

  std::string features;
  char buf[64];
  for (std::size_t v = 0; v < g.num_nodes(); ++v) {
    auto row = g.features().row(v);
    for (std::size_t c = 0; c < row.size(); ++c) {
      auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), row[c]);
      if (c) features.push_back('\t');
      features.append(buf, end);
    }
    features.push_back('\n');
  }
  write_file_atomic(dir / "features.tsv", features);

  std::ostringstream labels;
  for (int y : g.labels()) labels << y << '\n';
  write_file_atomic(dir / "labels.tsv", labels.str());

  for (const auto& s : ds.splits) {
    nlohmann::json doc = {{"train", s.train}, {"val", s.val}, {"test", s.test}};
    write_file_atomic(dir / "splits" / ("split_" + std::to_string(s.split_id) + ".json"), doc.dump() + "\n");
  }
}

}  // namespace hpgmn
