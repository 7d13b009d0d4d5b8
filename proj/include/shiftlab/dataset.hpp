#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "shiftlab/matrix.hpp"
#include "shiftlab/rng.hpp"

namespace shiftlab {

// Labeled feature vectors with class and domain ids. Row order is part of the
// contract; stream scenarios consume samples in file order.
struct FeatureDataset {
  std::size_t dim = 0;
  Matrix features;           // [n x dim]
  std::vector<int> labels;   // class ids, dense from 0
  std::vector<int> domains;  // domain ids, dense from 0
  std::map<int, std::vector<double>> attributes;  // optional, per class
};

std::size_t dataset_classes(const FeatureDataset& ds);
std::size_t dataset_domains(const FeatureDataset& ds);

// Shape agreement, finite entries, ids dense from 0, attribute rows (when
// present) of one shared width. Throws std::invalid_argument.
void validate_dataset(const FeatureDataset& ds);

// Gaussian classes pushed through one affine map per domain. Domain 0 is the
// identity; domain d > 0 composes d random plane rotations with an isotropic
// scale and a shift, so later domains drift further from the base.
struct SyntheticSpec {
  std::size_t classes = 4;
  std::size_t domains = 2;
  std::size_t dim = 6;
  std::size_t per_pair = 30;  // samples per (class, domain)
  double mean_scale = 2.0;    // class means drawn from mean_scale * U[-1,1]
  double rotation = 0.4;      // per-step plane rotation angle bound (radians)
  double shift = 1.0;         // per-domain translation scale
  double scale_min = 0.7;     // per-domain isotropic scale range
  double scale_max = 1.4;
  double noise = 0.3;  // sample sigma around the class mean
};

void validate_spec(const SyntheticSpec& spec);

// Samples of (class c, domain d) ~ transform_d(N(mean_c, noise^2 I)), written
// class-major then domain-major then repetition, so equal seeds give
// byte-identical files.
FeatureDataset gen_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

// Text format, one sample per line:
//   SHIFTLAB-DS v1 dim=<d> classes=<K> domains=<D>
//   ATTR <class> a1 ... a_m          (optional block)
//   <class> <domain> f1 ... f_d      (reals as %.17g)
std::string dataset_to_string(const FeatureDataset& ds);
FeatureDataset dataset_from_string(const std::string& text);

void write_dataset(const std::string& path, const FeatureDataset& ds);
FeatureDataset read_dataset(const std::string& path);

SyntheticSpec spec_from_json(const std::string& text);
std::string spec_to_json(const SyntheticSpec& spec);

}  // namespace shiftlab
