#pragma once

// Analytic domain transformation models x^e = G(x, e).
//
// Every kind has a distinguished identity code (all zeros, or contrast 1 and
// brightness 0) for which apply() returns x unchanged.

#include <cstddef>
#include <random>
#include <span>
#include <variant>
#include <vector>

#include "mbdg/diffcore.hpp"

namespace mbdg {

using EnvironmentCode = Vector;
using Rng = std::mt19937_64;

/// Rotation of coordinates (first, second) by angle e[0]; codes are sampled
/// uniformly from [min_angle, max_angle].
struct RotationModel {
  std::size_t first = 0;
  std::size_t second = 1;
  double min_angle = 0.0;
  double max_angle = 0.0;
};

/// Recolours by flipping color bits. Code entries are bits in {0, 1}
/// (rounded); entry k flips color group k. A group is either a single
/// coordinate holding 0 or `scale` (flip: v -> scale - v), or, when
/// `one_hot`, the pair in `coords` whose values are swapped.
struct ColorResampleModel {
  std::vector<std::size_t> coords;
  double scale = 1.0;
  bool one_hot = false;

  std::size_t code_dim() const { return one_hot ? 1 : coords.size(); }
};

/// x_i -> c * x_i + b on `coords`, where e = (c, b).
struct BrightnessContrastModel {
  std::vector<std::size_t> coords;
  double min_contrast = 0.5;
  double max_contrast = 1.5;
  double min_brightness = -0.5;
  double max_brightness = 0.5;
};

class DomainTransformationModel {
 public:
  using Kind = std::variant<RotationModel, ColorResampleModel, BrightnessContrastModel,
                            std::vector<DomainTransformationModel>>;

  explicit DomainTransformationModel(Kind kind);

  const Kind& kind() const noexcept { return kind_; }
  std::size_t code_dim() const;
  EnvironmentCode identity_code() const;
  /// Smallest feature dimension the model can act on.
  std::size_t min_input_dim() const;

  /// Whether apply(apply(x, a), b) = apply(x, a + b) holds for this kind.
  bool is_group() const;

 private:
  Kind kind_;
};

/// G(x, e); requires e.size() == G.code_dim().
Vector apply(const DomainTransformationModel& g, std::span<const double> x,
             std::span<const double> e);

/// Draws a code from the model's environment distribution.
EnvironmentCode sample_environment(const DomainTransformationModel& g, Rng& rng);

/// apply(g, x, sample_environment(g, rng)). Analytic codes are always fresh,
/// so the decomposition of x into (content, code) is the identity.
Vector generate_image(const DomainTransformationModel& g, std::span<const double> x, Rng& rng);

/// Rotation in the (first, second) plane with codes uniform in [lo, hi].
DomainTransformationModel rotation_model(std::size_t first, std::size_t second, double lo,
                                         double hi, std::size_t dim);

DomainTransformationModel color_resample_model(std::vector<std::size_t> coords, double scale,
                                               bool one_hot);

DomainTransformationModel brightness_contrast_model(std::vector<std::size_t> coords);

/// Applies parts in order; the code is the concatenation of the parts' codes.
DomainTransformationModel composite_model(std::vector<DomainTransformationModel> parts);

}  // namespace mbdg
