#pragma once

// Closed-form Gaussian diffusion on arbitrary real grids.
//
// Step indices run 1..T. gamma(0) is defined as 1 so that the inversion
// formulas are total. All grid operations are templated on the element type:
// tests run them in double, the training pipeline in float.

#include <cmath>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "latseg/tensor.hpp"

namespace latseg::diffusion {

enum class ScheduleKind { linear };
enum class VarianceMode { standard, paper_literal };

std::string to_string(ScheduleKind kind);
ScheduleKind schedule_kind_from_string(const std::string& s);
std::string to_string(VarianceMode mode);
VarianceMode variance_mode_from_string(const std::string& s);

class NoiseSchedule {
 public:
  NoiseSchedule() = default;

  // alphas[t] = 1 - beta_t with beta linearly interpolated over t = 1..T.
  static NoiseSchedule build(int steps, double beta_start, double beta_end,
                             ScheduleKind kind = ScheduleKind::linear);

  // Arbitrary per-step alphas in (0, 1]; used for degenerate test schedules.
  // Such schedules are not serializable through (T, beta_start, beta_end, kind).
  static NoiseSchedule from_alphas(std::vector<double> alphas);

  int steps() const { return static_cast<int>(alphas_.size()); }
  double alpha(int t) const;
  double gamma(int t) const;
  const std::vector<double>& alphas() const { return alphas_; }
  const std::vector<double>& gammas() const { return gammas_; }

  double beta_start() const { return beta_start_; }
  double beta_end() const { return beta_end_; }
  ScheduleKind kind() const { return kind_; }

 private:
  std::vector<double> alphas_;
  std::vector<double> gammas_;
  double beta_start_ = 0.0;
  double beta_end_ = 0.0;
  ScheduleKind kind_ = ScheduleKind::linear;
};

template <typename T>
struct DiffusionState {
  BasicTensor<T> value;
  int t = 0;
  std::optional<BasicTensor<T>> noise_used;
};

namespace detail {

inline void require_step(const NoiseSchedule& s, int t, const char* what) {
  if (t < 1 || t > s.steps())
    throw std::out_of_range(std::string(what) + ": step " + std::to_string(t) + " outside [1, " +
                            std::to_string(s.steps()) + "]");
}

}  // namespace detail

// S_t = sqrt(alpha_t) S_{t-1} + sqrt(1 - alpha_t) eps
template <typename T>
DiffusionState<T> forward_step(const DiffusionState<T>& prev, const NoiseSchedule& schedule, Rng& rng) {
  const int t = prev.t + 1;
  detail::require_step(schedule, t, "forward_step");
  const double a = schedule.alpha(t);
  const double signal = std::sqrt(a), noise = std::sqrt(1.0 - a);
  DiffusionState<T> out{BasicTensor<T>(prev.value.shape()), t, BasicTensor<T>(prev.value.shape())};
  std::normal_distribution<double> normal(0.0, 1.0);
  auto& eps = *out.noise_used;
  for (std::size_t i = 0; i < prev.value.size(); ++i) {
    const double e = normal(rng);
    eps[i] = static_cast<T>(e);
    out.value[i] = static_cast<T>(signal * double(prev.value[i]) + noise * e);
  }
  return out;
}

// S_t = sqrt(gamma_t) S_0 + sqrt(1 - gamma_t) eps
template <typename T>
DiffusionState<T> sample_noisy(const BasicTensor<T>& clean, int t, const NoiseSchedule& schedule,
                               const BasicTensor<T>& eps) {
  detail::require_step(schedule, t, "sample_noisy");
  require_same_shape(clean, eps, "sample_noisy");
  const double g = schedule.gamma(t);
  const double signal = std::sqrt(g), noise = std::sqrt(1.0 - g);
  DiffusionState<T> out{BasicTensor<T>(clean.shape()), t, eps};
  for (std::size_t i = 0; i < clean.size(); ++i)
    out.value[i] = static_cast<T>(signal * double(clean[i]) + noise * double(eps[i]));
  return out;
}

// Mean squared error between true and predicted noise.
template <typename T>
double diffusion_loss(const BasicTensor<T>& eps_true, const BasicTensor<T>& eps_pred) {
  require_same_shape(eps_true, eps_pred, "diffusion_loss");
  if (eps_true.size() == 0) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < eps_true.size(); ++i) {
    const double d = double(eps_pred[i]) - double(eps_true[i]);
    acc += d * d;
  }
  return acc / double(eps_true.size());
}

// (S_t - sqrt(1 - gamma_t) eps_pred) / sqrt(gamma_t)
template <typename T>
BasicTensor<T> predict_x0(const DiffusionState<T>& state, const BasicTensor<T>& eps_pred,
                          const NoiseSchedule& schedule) {
  detail::require_step(schedule, state.t, "predict_x0");
  require_same_shape(state.value, eps_pred, "predict_x0");
  const double g = schedule.gamma(state.t);
  const double inv_signal = 1.0 / std::sqrt(g), noise = std::sqrt(1.0 - g);
  BasicTensor<T> out(state.value.shape());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<T>((double(state.value[i]) - noise * double(eps_pred[i])) * inv_signal);
  return out;
}

// Noise estimate consistent with a given clean-state estimate at step t.
template <typename T>
BasicTensor<T> eps_from_x0(const DiffusionState<T>& state, const BasicTensor<T>& x0,
                           const NoiseSchedule& schedule) {
  detail::require_step(schedule, state.t, "eps_from_x0");
  require_same_shape(state.value, x0, "eps_from_x0");
  const double g = schedule.gamma(state.t);
  const double signal = std::sqrt(g), noise = std::sqrt(1.0 - g);
  BasicTensor<T> out(x0.shape());
  if (noise == 0.0) return out;
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<T>((double(state.value[i]) - signal * double(x0[i])) / noise);
  return out;
}

// S_{t-1} = (S_t - (1 - alpha_t)/sqrt(1 - gamma_t) eps_pred) / sqrt(alpha_t) + sigma_t eps'
// sigma_t = sqrt(1 - alpha_t) (standard) or gamma_t (paper_literal); zero at
// t = 1 when deterministic_last is set.
template <typename T>
DiffusionState<T> reverse_step(const DiffusionState<T>& state, const BasicTensor<T>& eps_pred,
                               const NoiseSchedule& schedule, Rng& rng,
                               VarianceMode mode = VarianceMode::standard,
                               bool deterministic_last = true) {
  const int t = state.t;
  detail::require_step(schedule, t, "reverse_step");
  require_same_shape(state.value, eps_pred, "reverse_step");
  const double a = schedule.alpha(t);
  const double g = schedule.gamma(t);
  const double inv_sqrt_a = 1.0 / std::sqrt(a);
  const double eps_coef = (1.0 - a) == 0.0 ? 0.0 : (1.0 - a) / std::sqrt(1.0 - g);
  const bool add_noise = !(t == 1 && deterministic_last);
  const double sigma = mode == VarianceMode::standard ? std::sqrt(1.0 - a) : g;

  DiffusionState<T> out{BasicTensor<T>(state.value.shape()), t - 1, std::nullopt};
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t i = 0; i < out.value.size(); ++i) {
    double v = inv_sqrt_a * (double(state.value[i]) - eps_coef * double(eps_pred[i]));
    if (add_noise) v += sigma * normal(rng);
    out.value[i] = static_cast<T>(v);
  }
  return out;
}

}  // namespace latseg::diffusion
