#include "latseg/diffusion.hpp"

namespace latseg::diffusion {

std::string to_string(ScheduleKind kind) {
  switch (kind) {
    case ScheduleKind::linear:
      return "linear";
  }
  return "linear";
}

ScheduleKind schedule_kind_from_string(const std::string& s) {
  if (s == "linear") return ScheduleKind::linear;
  throw std::invalid_argument("unknown schedule kind '" + s + "'");
}

std::string to_string(VarianceMode mode) {
  return mode == VarianceMode::standard ? "standard" : "paper_literal";
}

VarianceMode variance_mode_from_string(const std::string& s) {
  if (s == "standard") return VarianceMode::standard;
  if (s == "paper_literal") return VarianceMode::paper_literal;
  throw std::invalid_argument("unknown variance mode '" + s + "' (expected standard|paper_literal)");
}

NoiseSchedule NoiseSchedule::build(int steps, double beta_start, double beta_end, ScheduleKind kind) {
  if (steps < 1) throw std::invalid_argument("noise schedule needs T >= 1");
  if (!std::isfinite(beta_start) || !std::isfinite(beta_end))
    throw std::invalid_argument("noise schedule beta endpoints must be finite");
  if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0))
    throw std::invalid_argument("noise schedule needs 0 < beta_start <= beta_end < 1");

  NoiseSchedule s;
  s.beta_start_ = beta_start;
  s.beta_end_ = beta_end;
  s.kind_ = kind;
  s.alphas_.resize(steps);
  s.gammas_.resize(steps);
  double running = 1.0;
  for (int i = 0; i < steps; ++i) {
    const double frac = steps == 1 ? 0.0 : double(i) / double(steps - 1);
    const double beta = beta_start + (beta_end - beta_start) * frac;
    s.alphas_[i] = 1.0 - beta;
    running *= s.alphas_[i];
    s.gammas_[i] = running;
  }
  return s;
}

NoiseSchedule NoiseSchedule::from_alphas(std::vector<double> alphas) {
  if (alphas.empty()) throw std::invalid_argument("noise schedule needs T >= 1");
  NoiseSchedule s;
  double running = 1.0;
  for (double a : alphas) {
    if (!(a > 0.0) || !(a <= 1.0)) throw std::invalid_argument("alpha outside (0, 1]");
    running *= a;
    s.gammas_.push_back(running);
  }
  s.alphas_ = std::move(alphas);
  s.beta_start_ = 1.0 - s.alphas_.front();
  s.beta_end_ = 1.0 - s.alphas_.back();
  return s;
}

double NoiseSchedule::alpha(int t) const {
  detail::require_step(*this, t, "alpha");
  return alphas_[t - 1];
}

double NoiseSchedule::gamma(int t) const {
  if (t == 0) return 1.0;
  detail::require_step(*this, t, "gamma");
  return gammas_[t - 1];
}

}  // namespace latseg::diffusion
