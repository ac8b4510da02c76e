#include "mbdg/transforms.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace mbdg {

namespace {

template <class... Fs>
struct Overload : Fs... {
  using Fs::operator()...;
};
template <class... Fs>
Overload(Fs...) -> Overload<Fs...>;

bool bit(double v) { return v >= 0.5; }

double uniform(Rng& rng, double lo, double hi) {
  if (lo == hi) return lo;
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

std::size_t max_index_plus_one(const std::vector<std::size_t>& coords) {
  std::size_t m = 0;
  for (std::size_t c : coords) m = std::max(m, c + 1);
  return m;
}

}  // namespace

DomainTransformationModel::DomainTransformationModel(Kind kind) : kind_(std::move(kind)) {
  std::visit(Overload{
                 [](const RotationModel& r) {
                   if (r.first == r.second) throw InvalidArgument("rotation plane indices must differ");
                   if (!(r.min_angle <= r.max_angle)) throw InvalidArgument("rotation range is empty");
                 },
                 [](const ColorResampleModel& c) {
                   if (c.coords.empty()) throw InvalidArgument("color model needs coordinates");
                   if (c.one_hot && c.coords.size() != 2) {
                     throw InvalidArgument("one-hot color model needs exactly two coordinates");
                   }
                 },
                 [](const BrightnessContrastModel& b) {
                   if (b.coords.empty()) throw InvalidArgument("brightness-contrast model needs coordinates");
                   if (!(b.min_contrast <= b.max_contrast) || !(b.min_brightness <= b.max_brightness)) {
                     throw InvalidArgument("brightness-contrast range is empty");
                   }
                 },
                 [](const std::vector<DomainTransformationModel>& parts) {
                   if (parts.empty()) throw InvalidArgument("composite model needs parts");
                 },
             },
             kind_);
}

std::size_t DomainTransformationModel::code_dim() const {
  return std::visit(Overload{
                        [](const RotationModel&) -> std::size_t { return 1; },
                        [](const ColorResampleModel& c) -> std::size_t { return c.code_dim(); },
                        [](const BrightnessContrastModel&) -> std::size_t { return 2; },
                        [](const std::vector<DomainTransformationModel>& parts) -> std::size_t {
                          std::size_t n = 0;
                          for (const auto& p : parts) n += p.code_dim();
                          return n;
                        },
                    },
                    kind_);
}

EnvironmentCode DomainTransformationModel::identity_code() const {
  return std::visit(Overload{
                        [](const RotationModel&) { return EnvironmentCode{0.0}; },
                        [](const ColorResampleModel& c) { return EnvironmentCode(c.code_dim(), 0.0); },
                        [](const BrightnessContrastModel&) { return EnvironmentCode{1.0, 0.0}; },
                        [](const std::vector<DomainTransformationModel>& parts) {
                          EnvironmentCode e;
                          for (const auto& p : parts) {
                            const auto ep = p.identity_code();
                            e.insert(e.end(), ep.begin(), ep.end());
                          }
                          return e;
                        },
                    },
                    kind_);
}

std::size_t DomainTransformationModel::min_input_dim() const {
  return std::visit(Overload{
                        [](const RotationModel& r) { return std::max(r.first, r.second) + 1; },
                        [](const ColorResampleModel& c) { return max_index_plus_one(c.coords); },
                        [](const BrightnessContrastModel& b) { return max_index_plus_one(b.coords); },
                        [](const std::vector<DomainTransformationModel>& parts) {
                          std::size_t n = 0;
                          for (const auto& p : parts) n = std::max(n, p.min_input_dim());
                          return n;
                        },
                    },
                    kind_);
}

bool DomainTransformationModel::is_group() const {
  return std::holds_alternative<RotationModel>(kind_);
}

Vector apply(const DomainTransformationModel& g, std::span<const double> x,
             std::span<const double> e) {
  if (e.size() != g.code_dim()) {
    throw DimensionError("environment code has dimension " + std::to_string(e.size()) +
                         ", model expects " + std::to_string(g.code_dim()));
  }
  if (x.size() < g.min_input_dim()) {
    throw DimensionError("instance dimension " + std::to_string(x.size()) +
                         " too small for transformation model");
  }
  Vector out(x.begin(), x.end());
  std::visit(Overload{
                 [&](const RotationModel& r) {
                   const double c = std::cos(e[0]);
                   const double s = std::sin(e[0]);
                   const double a = x[r.first];
                   const double b = x[r.second];
                   out[r.first] = c * a - s * b;
                   out[r.second] = s * a + c * b;
                 },
                 [&](const ColorResampleModel& m) {
                   if (m.one_hot) {
                     if (bit(e[0])) std::swap(out[m.coords[0]], out[m.coords[1]]);
                     return;
                   }
                   for (std::size_t k = 0; k < m.coords.size(); ++k) {
                     if (bit(e[k])) out[m.coords[k]] = m.scale - out[m.coords[k]];
                   }
                 },
                 [&](const BrightnessContrastModel& m) {
                   for (std::size_t i : m.coords) out[i] = e[0] * out[i] + e[1];
                 },
                 [&](const std::vector<DomainTransformationModel>& parts) {
                   std::size_t at = 0;
                   for (const auto& p : parts) {
                     const std::size_t k = p.code_dim();
                     out = apply(p, out, e.subspan(at, k));
                     at += k;
                   }
                 },
             },
             g.kind());
  require_finite(out, "transformed instance");
  return out;
}

EnvironmentCode sample_environment(const DomainTransformationModel& g, Rng& rng) {
  return std::visit(Overload{
                        [&](const RotationModel& r) {
                          return EnvironmentCode{uniform(rng, r.min_angle, r.max_angle)};
                        },
                        [&](const ColorResampleModel& c) {
                          EnvironmentCode e(c.code_dim());
                          std::bernoulli_distribution coin(0.5);
                          for (double& v : e) v = coin(rng) ? 1.0 : 0.0;
                          return e;
                        },
                        [&](const BrightnessContrastModel& b) {
                          const double contrast = uniform(rng, b.min_contrast, b.max_contrast);
                          const double brightness = uniform(rng, b.min_brightness, b.max_brightness);
                          return EnvironmentCode{contrast, brightness};
                        },
                        [&](const std::vector<DomainTransformationModel>& parts) {
                          EnvironmentCode e;
                          for (const auto& p : parts) {
                            const auto ep = sample_environment(p, rng);
                            e.insert(e.end(), ep.begin(), ep.end());
                          }
                          return e;
                        },
                    },
                    g.kind());
}

Vector generate_image(const DomainTransformationModel& g, std::span<const double> x, Rng& rng) {
  const EnvironmentCode e = sample_environment(g, rng);
  return apply(g, x, e);
}

DomainTransformationModel rotation_model(std::size_t first, std::size_t second, double lo,
                                         double hi, std::size_t dim) {
  if (first >= dim || second >= dim) throw InvalidArgument("rotation plane index out of range");
  return DomainTransformationModel(RotationModel{first, second, lo, hi});
}

DomainTransformationModel color_resample_model(std::vector<std::size_t> coords, double scale,
                                               bool one_hot) {
  return DomainTransformationModel(ColorResampleModel{std::move(coords), scale, one_hot});
}

DomainTransformationModel brightness_contrast_model(std::vector<std::size_t> coords) {
  BrightnessContrastModel m;
  m.coords = std::move(coords);
  return DomainTransformationModel(std::move(m));
}

DomainTransformationModel composite_model(std::vector<DomainTransformationModel> parts) {
  return DomainTransformationModel(std::move(parts));
}

}  // namespace mbdg
