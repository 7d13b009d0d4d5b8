#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "shiftlab/matrix.hpp"
#include "shiftlab/rng.hpp"

namespace shiftlab {

enum class MaskSurrogate : std::uint8_t { identity = 0, sigmoid = 1 };

enum class MaskVariant { piggyback, simple, full };

// Frozen base weights plus a task-private real-valued mask matrix R and the
// affine coefficients k0..k3. The binary mask is M = 1[R >= 0].
struct MaskedAffine {
  Matrix W;
  Matrix R;
  double k0 = 1.0, k1 = 0.0, k2 = 0.0, k3 = 0.0;
  MaskSurrogate surrogate = MaskSurrogate::identity;
};

// R drawn uniform in [1e-4, 2e-4] so masks start all-ones and the effective
// weights start at W for every variant.
MaskedAffine init_masked(const Matrix& w, MaskVariant variant,
                         MaskSurrogate surrogate, RngStream& rng);

Matrix binary_mask(const Matrix& r);

// W~ = k0 W + k1 1 + k2 M + k3 (W .* M)
Matrix effective_weights(const MaskedAffine& layer);

struct MaskGrads {
  Matrix dR;
  double dk0 = 0.0, dk1 = 0.0, dk2 = 0.0, dk3 = 0.0;
};

// Straight-through backward: dW~/dM = k2 + k3 W reaches R through the
// surrogate derivative (identity: 1; sigmoid: s(r)(1-s(r))); the k gradients
// are exact inner products with the upstream gradient.
MaskGrads masked_backward(const MaskedAffine& layer, const Matrix& upstream);

// Fraction of mask entries where the surrogate gradient sign matches the
// discrete descent direction obtained by flipping that bit. Entries with a
// (numerically) zero gradient on either side are skipped; if every entry is
// skipped the check is vacuous and returns 1.
double sign_agreement_check(const MaskedAffine& layer,
                            const std::function<double(const Matrix&)>& loss);

// 1 + bits_per_param * (T - 1) / 32; classifier heads excluded.
double param_overhead(std::size_t base_params, std::size_t bits_per_param,
                      std::size_t tasks);

// Binary mask bundle: per task, per layer, the bit-packed mask (row-major,
// little-endian bit packing) plus the four affine coefficients.
std::vector<std::uint8_t> masks_to_bundle(
    const std::vector<std::vector<MaskedAffine>>& tasks);

// Rebuilds mask layers on top of the given frozen base weights (one Matrix
// per layer). Restored R carries only the mask's sign information.
std::vector<std::vector<MaskedAffine>> bundle_to_masks(
    const std::vector<std::uint8_t>& bytes,
    const std::vector<Matrix>& base_weights);

}  // namespace shiftlab
