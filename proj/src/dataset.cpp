#include "shiftlab/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace shiftlab {

namespace {

int dense_max(const std::vector<int>& ids, const char* what) {
  int hi = -1;
  for (int id : ids) {
    if (id < 0) throw std::invalid_argument(std::string(what) + " id negative");
    hi = std::max(hi, id);
  }
  std::vector<char> seen(static_cast<std::size_t>(hi + 1), 0);
  for (int id : ids) seen[static_cast<std::size_t>(id)] = 1;
  for (char s : seen)
    if (!s) throw std::invalid_argument(std::string(what) + " ids not dense");
  return hi;
}

std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double parse_real(const std::string& tok) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(tok, &used);
  } catch (const std::exception&) {
    throw std::invalid_argument("bad real: " + tok);
  }
  if (used != tok.size()) throw std::invalid_argument("bad real: " + tok);
  return v;
}

int parse_id(const std::string& tok, const char* what) {
  std::size_t used = 0;
  int v = 0;
  try {
    v = std::stoi(tok, &used);
  } catch (const std::exception&) {
    throw std::invalid_argument(std::string("bad ") + what + ": " + tok);
  }
  if (used != tok.size() || v < 0)
    throw std::invalid_argument(std::string("bad ") + what + ": " + tok);
  return v;
}

std::vector<std::string> split_ws(const std::string& line) {
  std::istringstream in(line);
  std::vector<std::string> out;
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

// Rotation in the (i, j) plane by angle a, applied in place.
void apply_givens(std::vector<double>& x, std::size_t i, std::size_t j,
                  double a) {
  const double c = std::cos(a), s = std::sin(a);
  const double xi = x[i], xj = x[j];
  x[i] = c * xi - s * xj;
  x[j] = s * xi + c * xj;
}

struct AffineMap {
  std::vector<std::array<double, 3>> planes;  // (i, j, angle)
  double scale = 1.0;
  std::vector<double> shift;
};

std::vector<double> apply_map(const AffineMap& map, std::vector<double> x) {
  for (const auto& p : map.planes)
    apply_givens(x, static_cast<std::size_t>(p[0]),
                 static_cast<std::size_t>(p[1]), p[2]);
  for (std::size_t f = 0; f < x.size(); ++f)
    x[f] = map.scale * x[f] + map.shift[f];
  return x;
}

}  // namespace

std::size_t dataset_classes(const FeatureDataset& ds) {
  return ds.labels.empty()
             ? 0
             : static_cast<std::size_t>(
                   *std::max_element(ds.labels.begin(), ds.labels.end())) +
                   1;
}

std::size_t dataset_domains(const FeatureDataset& ds) {
  return ds.domains.empty()
             ? 0
             : static_cast<std::size_t>(
                   *std::max_element(ds.domains.begin(), ds.domains.end())) +
                   1;
}

void validate_dataset(const FeatureDataset& ds) {
  if (ds.features.cols != ds.dim)
    throw std::invalid_argument("feature width != dim");
  if (ds.features.rows != ds.labels.size() ||
      ds.features.rows != ds.domains.size())
    throw std::invalid_argument("labels/domains length mismatch");
  if (!all_finite(ds.features))
    throw std::invalid_argument("non-finite feature");
  if (ds.labels.empty()) throw std::invalid_argument("empty dataset");
  dense_max(ds.labels, "class");
  dense_max(ds.domains, "domain");
  std::size_t attr_dim = 0;
  for (const auto& [id, vec] : ds.attributes) {
    if (id < 0 || static_cast<std::size_t>(id) >= dataset_classes(ds))
      throw std::invalid_argument("attribute for unknown class");
    if (vec.empty()) throw std::invalid_argument("empty attribute row");
    if (attr_dim == 0) attr_dim = vec.size();
    if (vec.size() != attr_dim)
      throw std::invalid_argument("ragged attribute rows");
    for (double v : vec)
      if (!std::isfinite(v)) throw std::invalid_argument("non-finite attribute");
  }
}

void validate_spec(const SyntheticSpec& spec) {
  if (spec.classes < 2)
    throw std::invalid_argument("spec needs at least 2 classes");
  if (spec.domains == 0 || spec.per_pair == 0)
    throw std::invalid_argument("spec counts must be positive");
  if (spec.dim < 2) throw std::invalid_argument("dim must be at least 2");
  if (!(spec.noise >= 0.0)) throw std::invalid_argument("noise must be >= 0");
  if (!(spec.scale_min > 0.0) || spec.scale_max < spec.scale_min)
    throw std::invalid_argument("degenerate scale range");
}

FeatureDataset gen_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  validate_spec(spec);
  RngStream rng(seed);

  std::vector<std::vector<double>> means(spec.classes);
  for (auto& m : means) {
    m.resize(spec.dim);
    for (auto& v : m) v = spec.mean_scale * rng.next_uniform(-1.0, 1.0);
  }

  std::vector<AffineMap> maps(spec.domains);
  maps[0].shift.assign(spec.dim, 0.0);
  for (std::size_t d = 1; d < spec.domains; ++d) {
    AffineMap& map = maps[d];
    for (std::size_t step = 0; step < d; ++step) {
      const std::size_t i = rng.next_below(spec.dim);
      std::size_t j = rng.next_below(spec.dim - 1);
      if (j >= i) ++j;
      map.planes.push_back({static_cast<double>(i), static_cast<double>(j),
                            rng.next_uniform(-spec.rotation, spec.rotation)});
    }
    map.scale = rng.next_uniform(spec.scale_min, spec.scale_max);
    map.shift.resize(spec.dim);
    for (auto& v : map.shift) v = spec.shift * rng.next_uniform(-1.0, 1.0);
  }

  FeatureDataset ds;
  ds.dim = spec.dim;
  const std::size_t n = spec.classes * spec.domains * spec.per_pair;
  ds.features = Matrix(n, spec.dim);
  std::size_t row = 0;
  for (std::size_t c = 0; c < spec.classes; ++c)
    for (std::size_t d = 0; d < spec.domains; ++d)
      for (std::size_t rep = 0; rep < spec.per_pair; ++rep) {
        std::vector<double> x = means[c];
        for (auto& v : x) v += spec.noise * rng.next_normal();
        ds.features.set_row(row++, apply_map(maps[d], std::move(x)));
        ds.labels.push_back(static_cast<int>(c));
        ds.domains.push_back(static_cast<int>(d));
      }
  return ds;
}

std::string dataset_to_string(const FeatureDataset& ds) {
  validate_dataset(ds);
  std::string out = "SHIFTLAB-DS v1 dim=" + std::to_string(ds.dim) +
                    " classes=" + std::to_string(dataset_classes(ds)) +
                    " domains=" + std::to_string(dataset_domains(ds)) + "\n";
  for (const auto& [id, vec] : ds.attributes) {
    out += "ATTR " + std::to_string(id);
    for (double v : vec) out += " " + format_real(v);
    out += "\n";
  }
  for (std::size_t i = 0; i < ds.features.rows; ++i) {
    out += std::to_string(ds.labels[i]) + " " + std::to_string(ds.domains[i]);
    for (std::size_t f = 0; f < ds.dim; ++f)
      out += " " + format_real(ds.features.at(i, f));
    out += "\n";
  }
  return out;
}

FeatureDataset dataset_from_string(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("empty dataset file");
  auto head = split_ws(line);
  if (head.size() != 5 || head[0] != "SHIFTLAB-DS" || head[1] != "v1")
    throw std::invalid_argument("bad dataset header");
  auto header_field = [&](std::size_t pos, const char* key) {
    const std::string prefix = std::string(key) + "=";
    if (head[pos].rfind(prefix, 0) != 0)
      throw std::invalid_argument("bad dataset header");
    return static_cast<std::size_t>(
        parse_id(head[pos].substr(prefix.size()), key));
  };
  FeatureDataset ds;
  ds.dim = header_field(2, "dim");
  const std::size_t classes = header_field(3, "classes");
  const std::size_t domains = header_field(4, "domains");

  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    auto toks = split_ws(line);
    if (toks.empty()) continue;
    if (toks[0] == "ATTR") {
      if (toks.size() < 3) throw std::invalid_argument("short ATTR line");
      const int id = parse_id(toks[1], "class");
      std::vector<double> vec;
      for (std::size_t t = 2; t < toks.size(); ++t)
        vec.push_back(parse_real(toks[t]));
      if (!ds.attributes.emplace(id, std::move(vec)).second)
        throw std::invalid_argument("duplicate ATTR class");
      continue;
    }
    if (toks.size() != 2 + ds.dim)
      throw std::invalid_argument("bad sample line width");
    ds.labels.push_back(parse_id(toks[0], "class"));
    ds.domains.push_back(parse_id(toks[1], "domain"));
    std::vector<double> x;
    for (std::size_t t = 2; t < toks.size(); ++t)
      x.push_back(parse_real(toks[t]));
    rows.push_back(std::move(x));
  }
  if (rows.empty()) throw std::invalid_argument("dataset has no samples");
  ds.features = from_rows(rows);
  validate_dataset(ds);
  if (dataset_classes(ds) != classes || dataset_domains(ds) != domains)
    throw std::invalid_argument("header counts disagree with samples");
  return ds;
}

void write_dataset(const std::string& path, const FeatureDataset& ds) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << dataset_to_string(ds);
}

FeatureDataset read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("cannot read " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return dataset_from_string(buf.str());
}

SyntheticSpec spec_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("bad spec json: ") + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("spec json must be an object");
  SyntheticSpec spec;
  try {
    spec.classes = j.value("classes", spec.classes);
    spec.domains = j.value("domains", spec.domains);
    spec.dim = j.value("dim", spec.dim);
    spec.per_pair = j.value("per_pair", spec.per_pair);
    spec.mean_scale = j.value("mean_scale", spec.mean_scale);
    spec.rotation = j.value("rotation", spec.rotation);
    spec.shift = j.value("shift", spec.shift);
    spec.scale_min = j.value("scale_min", spec.scale_min);
    spec.scale_max = j.value("scale_max", spec.scale_max);
    spec.noise = j.value("noise", spec.noise);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("bad spec field: ") + e.what());
  }
  validate_spec(spec);
  return spec;
}

std::string spec_to_json(const SyntheticSpec& spec) {
  nlohmann::ordered_json j;
  j["classes"] = spec.classes;
  j["domains"] = spec.domains;
  j["dim"] = spec.dim;
  j["per_pair"] = spec.per_pair;
  j["mean_scale"] = spec.mean_scale;
  j["rotation"] = spec.rotation;
  j["shift"] = spec.shift;
  j["scale_min"] = spec.scale_min;
  j["scale_max"] = spec.scale_max;
  j["noise"] = spec.noise;
  return j.dump(2) + "\n";
}

}  // namespace shiftlab
