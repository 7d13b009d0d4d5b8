#include "shiftlab/masks.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace shiftlab {

namespace {

constexpr char kBundleMagic[4] = {'S', 'L', 'M', 'B'};
constexpr std::uint32_t kBundleVersion = 1;

double surrogate_derivative(MaskSurrogate s, double r) {
  if (s == MaskSurrogate::identity) return 1.0;
  const double sig = 1.0 / (1.0 + std::exp(-r));
  return sig * (1.0 - sig);
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back((v >> (8 * i)) & 0xFF);
}

void put_f64(std::vector<std::uint8_t>& out, double v) {
  std::uint64_t bits;
  static_assert(sizeof(bits) == sizeof(v));
  std::memcpy(&bits, &v, sizeof(bits));
  for (int i = 0; i < 8; ++i) out.push_back((bits >> (8 * i)) & 0xFF);
}

struct Reader {
  const std::vector<std::uint8_t>& bytes;
  std::size_t pos = 0;

  std::uint8_t u8() {
    if (pos >= bytes.size())
      throw std::invalid_argument("mask bundle: truncated");
    return bytes[pos++];
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
    return v;
  }
  double f64() {
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(u8()) << (8 * i);
    double v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
  }
};

}  // namespace

MaskedAffine init_masked(const Matrix& w, MaskVariant variant,
                         MaskSurrogate surrogate, RngStream& rng) {
  MaskedAffine layer;
  layer.W = w;
  layer.R = Matrix(w.rows, w.cols);
  for (auto& r : layer.R.data) r = rng.next_uniform(1e-4, 2e-4);
  layer.surrogate = surrogate;
  switch (variant) {
    case MaskVariant::piggyback:
      layer.k0 = 0.0;
      layer.k1 = 0.0;
      layer.k2 = 0.0;
      layer.k3 = 1.0;
      break;
    case MaskVariant::simple:
    case MaskVariant::full:
      layer.k0 = 1.0;
      layer.k1 = 0.0;
      layer.k2 = 0.0;
      layer.k3 = 0.0;
      break;
  }
  return layer;
}

Matrix binary_mask(const Matrix& r) {
  Matrix m(r.rows, r.cols);
  for (std::size_t i = 0; i < r.data.size(); ++i)
    m.data[i] = r.data[i] >= 0.0 ? 1.0 : 0.0;
  return m;
}

Matrix effective_weights(const MaskedAffine& layer) {
  if (!layer.W.same_shape(layer.R))
    throw std::invalid_argument("masked layer: W and R shapes differ");
  Matrix out(layer.W.rows, layer.W.cols);
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    const double w = layer.W.data[i];
    const double m = layer.R.data[i] >= 0.0 ? 1.0 : 0.0;
    out.data[i] = layer.k0 * w + layer.k1 + layer.k2 * m + layer.k3 * w * m;
  }
  return out;
}

MaskGrads masked_backward(const MaskedAffine& layer, const Matrix& upstream) {
  if (!upstream.same_shape(layer.W))
    throw std::invalid_argument("masked_backward: upstream shape mismatch");
  MaskGrads g;
  g.dR = Matrix(layer.R.rows, layer.R.cols);
  for (std::size_t i = 0; i < upstream.data.size(); ++i) {
    const double gu = upstream.data[i];
    const double w = layer.W.data[i];
    const double m = layer.R.data[i] >= 0.0 ? 1.0 : 0.0;
    g.dk0 += gu * w;
    g.dk1 += gu;
    g.dk2 += gu * m;
    g.dk3 += gu * w * m;
    g.dR.data[i] = gu * (layer.k2 + layer.k3 * w) *
                   surrogate_derivative(layer.surrogate, layer.R.data[i]);
  }
  return g;
}

double sign_agreement_check(const MaskedAffine& layer,
                            const std::function<double(const Matrix&)>& loss) {
  const Matrix w_eff = effective_weights(layer);
  const double base = loss(w_eff);
  if (!std::isfinite(base))
    throw std::invalid_argument("sign_agreement_check: non-finite loss");

  // black-box upstream gradient dL/dW~ via central differences
  Matrix upstream(w_eff.rows, w_eff.cols);
  const double h = 1e-5;
  for (std::size_t i = 0; i < w_eff.data.size(); ++i) {
    Matrix hi = w_eff, lo = w_eff;
    hi.data[i] += h;
    lo.data[i] -= h;
    upstream.data[i] = (loss(hi) - loss(lo)) / (2.0 * h);
  }
  const MaskGrads g = masked_backward(layer, upstream);

  std::size_t considered = 0, agreed = 0;
  for (std::size_t i = 0; i < w_eff.data.size(); ++i) {
    const double m = layer.R.data[i] >= 0.0 ? 1.0 : 0.0;
    const double delta = layer.k2 + layer.k3 * layer.W.data[i];
    Matrix flipped = w_eff;
    flipped.data[i] += (m > 0.5 ? -delta : delta);
    // loss change when the bit moves from 0 to 1
    const double up_minus_down =
        m > 0.5 ? base - loss(flipped) : loss(flipped) - base;
    const double surrogate = g.dR.data[i];
    if (std::fabs(up_minus_down) < 1e-12 || std::fabs(surrogate) < 1e-12)
      continue;  // undefined sign, skipped
    ++considered;
    if ((up_minus_down > 0.0) == (surrogate > 0.0)) ++agreed;
  }
  if (considered == 0) return 1.0;
  return static_cast<double>(agreed) / static_cast<double>(considered);
}

double param_overhead(std::size_t base_params, std::size_t bits_per_param,
                      std::size_t tasks) {
  if (tasks < 1) throw std::invalid_argument("param_overhead: T must be >= 1");
  if (base_params < 1)
    throw std::invalid_argument("param_overhead: empty base model");
  return 1.0 + static_cast<double>(bits_per_param) *
                   static_cast<double>(tasks - 1) / 32.0;
}

std::vector<std::uint8_t> masks_to_bundle(
    const std::vector<std::vector<MaskedAffine>>& tasks) {
  std::vector<std::uint8_t> out;
  out.insert(out.end(), kBundleMagic, kBundleMagic + 4);
  put_u32(out, kBundleVersion);
  put_u32(out, static_cast<std::uint32_t>(tasks.size()));
  for (const auto& task : tasks) {
    put_u32(out, static_cast<std::uint32_t>(task.size()));
    for (const auto& layer : task) {
      put_u32(out, static_cast<std::uint32_t>(layer.R.rows));
      put_u32(out, static_cast<std::uint32_t>(layer.R.cols));
      put_f64(out, layer.k0);
      put_f64(out, layer.k1);
      put_f64(out, layer.k2);
      put_f64(out, layer.k3);
      out.push_back(static_cast<std::uint8_t>(layer.surrogate));
      const std::size_t n = layer.R.data.size();
      std::vector<std::uint8_t> packed((n + 7) / 8, 0);
      for (std::size_t i = 0; i < n; ++i)
        if (layer.R.data[i] >= 0.0) packed[i / 8] |= (1u << (i % 8));
      out.insert(out.end(), packed.begin(), packed.end());
    }
  }
  return out;
}

std::vector<std::vector<MaskedAffine>> bundle_to_masks(
    const std::vector<std::uint8_t>& bytes,
    const std::vector<Matrix>& base_weights) {
  Reader rd{bytes};
  for (char c : kBundleMagic)
    if (rd.u8() != static_cast<std::uint8_t>(c))
      throw std::invalid_argument("mask bundle: bad magic");
  if (rd.u32() != kBundleVersion)
    throw std::invalid_argument("mask bundle: unsupported version");

  std::vector<std::vector<MaskedAffine>> tasks(rd.u32());
  for (auto& task : tasks) {
    task.resize(rd.u32());
    for (std::size_t l = 0; l < task.size(); ++l) {
      auto& layer = task[l];
      const std::uint32_t rows = rd.u32();
      const std::uint32_t cols = rd.u32();
      if (l >= base_weights.size())
        throw std::invalid_argument("mask bundle: missing base weights");
      if (base_weights[l].rows != rows || base_weights[l].cols != cols)
        throw std::invalid_argument("mask bundle: base weight shape mismatch");
      layer.W = base_weights[l];
      layer.k0 = rd.f64();
      layer.k1 = rd.f64();
      layer.k2 = rd.f64();
      layer.k3 = rd.f64();
      const std::uint8_t s = rd.u8();
      if (s > 1) throw std::invalid_argument("mask bundle: bad surrogate tag");
      layer.surrogate = static_cast<MaskSurrogate>(s);
      layer.R = Matrix(rows, cols);
      const std::size_t n = layer.R.data.size();
      std::vector<std::uint8_t> packed((n + 7) / 8);
      for (auto& b : packed) b = rd.u8();
      for (std::size_t i = 0; i < n; ++i)
        layer.R.data[i] = (packed[i / 8] >> (i % 8)) & 1u ? 1e-4 : -1e-4;
    }
  }
  return tasks;
}

}  // namespace shiftlab
