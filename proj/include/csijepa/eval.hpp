#pragma once

#include "csijepa/probe.hpp"
#include "csijepa/trainer.hpp"

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace csijepa {

/// Accuracy and F1 in percentage points.
struct CurvePoint {
  std::int64_t budget = 0;
  double accuracy = 0.0;
  double f1 = 0.0;
};

struct BudgetCurve {
  std::string method;
  std::string task;
  std::vector<CurvePoint> points;  ///< budgets strictly increasing

  void validate() const;
  [[nodiscard]] const CurvePoint* find(std::int64_t budget) const;
};

inline constexpr double kMatchTolerance = 5.0;

struct MatchReport {
  std::int64_t reference = 0;
  std::optional<std::int64_t> budget_j;  ///< empty when no candidate budget reaches the target
  std::int64_t budget_t = 0;
  double tolerance = kMatchTolerance;

  [[nodiscard]] bool matched() const noexcept { return budget_j.has_value(); }
  [[nodiscard]] std::optional<double> saving() const {
    if (!budget_j) return std::nullopt;
    return 1.0 - static_cast<double>(*budget_j) / static_cast<double>(budget_t);
  }
};

/// Smallest budgets at which the candidate J and the reference T reach
/// P_T(b') - tolerance, on the discrete budget grids. Throws unless b' lies on T.
MatchReport matched_budget(const BudgetCurve& candidate, const BudgetCurve& reference, std::int64_t reference_budget,
                           double tolerance = kMatchTolerance);

struct BestSaving {
  std::optional<MatchReport> report;  ///< empty when no reference budget yields a match
  bool positive = false;
};

/// Maximizes the saving over every reference budget; the smallest b' wins ties.
BestSaving best_saving(const BudgetCurve& candidate, const BudgetCurve& reference,
                       double tolerance = kMatchTolerance);

struct GainSummary {
  std::size_t shared = 0;
  double mean_accuracy = 0.0;
  double max_accuracy = 0.0;
  double mean_f1 = 0.0;
  double max_f1 = 0.0;
};

/// Pointwise J - T differences over the budgets both curves contain.
GainSummary gain_summary(const BudgetCurve& candidate, const BudgetCurve& reference);

/// One curve per (task, head) averaged over seeds, converted to percentage points.
std::vector<BudgetCurve> curves_from_records(std::span<const ProbeRecord> records);

void write_curves_csv(const std::filesystem::path& path, std::span<const BudgetCurve> curves);

struct MatchRow {
  std::string task;
  std::string candidate;
  std::string reference;
  MatchReport report;
  bool best = false;
};

std::vector<MatchRow> match_table(std::span<const BudgetCurve> curves, const std::string& candidate,
                                  const std::string& reference, double tolerance = kMatchTolerance);
void write_matches_csv(const std::filesystem::path& path, std::span<const MatchRow> rows);

// ---------------------------------------------------------------------------

struct AblationRow {
  std::string strategy;
  std::string task;
  double accuracy = 0.0;  ///< percentage points
  double f1 = 0.0;
};

/// Pretrains once per strategy from the same seed on `corpus`, then fits an
/// MLP head at `budget` on every task.
std::vector<AblationRow> ablation_matrix(std::span<const MaskStrategy> strategies, std::span<const ProbeTask> tasks,
                                         std::span<const CsiWindow> corpus, const ModelConfig& model,
                                         const PretrainConfig& pretrain_cfg, std::int64_t budget,
                                         const ProbeOptions& probe_options);

void write_ablation_csv(const std::filesystem::path& path, std::span<const AblationRow> rows);

}  // namespace csijepa
