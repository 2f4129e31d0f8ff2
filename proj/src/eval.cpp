#include "csijepa/eval.hpp"

#include <algorithm>
#include <fstream>
#include <map>

namespace csijepa {

void BudgetCurve::validate() const {
  for (std::size_t i = 1; i < points.size(); ++i) {
    if (points[i].budget <= points[i - 1].budget) {
      throw Error("budget curve " + method + "/" + task + ": budgets must be strictly increasing");
    }
  }
}

const CurvePoint* BudgetCurve::find(std::int64_t budget) const {
  for (const auto& p : points) {
    if (p.budget == budget) return &p;
  }
  return nullptr;
}

namespace {

std::optional<std::int64_t> first_reaching(const BudgetCurve& curve, double level) {
  for (const auto& p : curve.points) {
    if (p.accuracy >= level) return p.budget;
  }
  return std::nullopt;
}

}  // namespace

MatchReport matched_budget(const BudgetCurve& candidate, const BudgetCurve& reference, std::int64_t reference_budget,
                           double tolerance) {
  candidate.validate();
  reference.validate();
  const CurvePoint* ref = reference.find(reference_budget);
  if (!ref) throw Error("matched_budget: budget " + std::to_string(reference_budget) + " is not on the reference curve");
  const double level = ref->accuracy - tolerance;
  MatchReport r;
  r.reference = reference_budget;
  r.tolerance = tolerance;
  r.budget_t = *first_reaching(reference, level);  // b' itself qualifies
  r.budget_j = first_reaching(candidate, level);
  return r;
}

BestSaving best_saving(const BudgetCurve& candidate, const BudgetCurve& reference, double tolerance) {
  BestSaving best;
  for (const auto& p : reference.points) {
    const MatchReport r = matched_budget(candidate, reference, p.budget, tolerance);
    if (!r.matched()) continue;
    if (!best.report || *r.saving() > *best.report->saving()) best.report = r;
  }
  best.positive = best.report && *best.report->saving() > 0.0;
  return best;
}

GainSummary gain_summary(const BudgetCurve& candidate, const BudgetCurve& reference) {
  GainSummary g;
  for (const auto& p : candidate.points) {
    const CurvePoint* q = reference.find(p.budget);
    if (!q) continue;
    const double da = p.accuracy - q->accuracy;
    const double df = p.f1 - q->f1;
    if (g.shared == 0) {
      g.max_accuracy = da;
      g.max_f1 = df;
    }
    g.max_accuracy = std::max(g.max_accuracy, da);
    g.max_f1 = std::max(g.max_f1, df);
    g.mean_accuracy += da;
    g.mean_f1 += df;
    ++g.shared;
  }
  if (g.shared > 0) {
    g.mean_accuracy /= static_cast<double>(g.shared);
    g.mean_f1 /= static_cast<double>(g.shared);
  }
  return g;
}

std::vector<BudgetCurve> curves_from_records(std::span<const ProbeRecord> records) {
  struct Acc {
    double accuracy = 0.0;
    double f1 = 0.0;
    int n = 0;
  };
  std::map<std::pair<std::string, std::string>, std::map<std::int64_t, Acc>> grouped;
  for (const auto& r : records) {
    Acc& a = grouped[{r.task, r.head}][r.budget];
    a.accuracy += r.accuracy;
    a.f1 += r.f1;
    ++a.n;
  }
  std::vector<BudgetCurve> curves;
  for (const auto& [key, by_budget] : grouped) {
    BudgetCurve c{key.second, key.first, {}};
    for (const auto& [budget, a] : by_budget) {
      c.points.push_back({budget, 100.0 * a.accuracy / a.n, 100.0 * a.f1 / a.n});
    }
    curves.push_back(std::move(c));
  }
  return curves;
}

void write_curves_csv(const std::filesystem::path& path, std::span<const BudgetCurve> curves) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("write_curves_csv: cannot open " + path.string());
  out << "task,method,budget,accuracy,f1\n";
  for (const auto& c : curves) {
    for (const auto& p : c.points) out << c.task << ',' << c.method << ',' << p.budget << ',' << p.accuracy << ',' << p.f1 << '\n';
  }
}

std::vector<MatchRow> match_table(std::span<const BudgetCurve> curves, const std::string& candidate,
                                  const std::string& reference, double tolerance) {
  std::vector<MatchRow> rows;
  for (const auto& j : curves) {
    if (j.method != candidate) continue;
    const auto t = std::find_if(curves.begin(), curves.end(),
                                [&](const BudgetCurve& c) { return c.method == reference && c.task == j.task; });
    if (t == curves.end()) continue;
    const BestSaving best = best_saving(j, *t, tolerance);
    for (const auto& p : t->points) {
      MatchRow row{j.task, candidate, reference, matched_budget(j, *t, p.budget, tolerance), false};
      row.best = best.positive && best.report->reference == p.budget;
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

void write_matches_csv(const std::filesystem::path& path, std::span<const MatchRow> rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("write_matches_csv: cannot open " + path.string());
  out << "task,candidate,reference,reference_budget,budget_j,budget_t,saving,best\n";
  for (const auto& r : rows) {
    out << r.task << ',' << r.candidate << ',' << r.reference << ',' << r.report.reference << ',';
    if (r.report.budget_j) {
      out << *r.report.budget_j << ',' << r.report.budget_t << ',' << *r.report.saving();
    } else {
      out << ",," << r.report.budget_t << ",";
    }
    out << ',' << (r.best ? 1 : 0) << '\n';
  }
}

std::vector<AblationRow> ablation_matrix(std::span<const MaskStrategy> strategies, std::span<const ProbeTask> tasks,
                                         std::span<const CsiWindow> corpus, const ModelConfig& model,
                                         const PretrainConfig& pretrain_cfg, std::int64_t budget,
                                         const ProbeOptions& probe_options) {
  std::vector<AblationRow> rows;
  const HeadKind heads[] = {HeadKind::Mlp};
  const std::int64_t budgets[] = {budget};
  for (const MaskStrategy strategy : strategies) {
    PretrainConfig cfg = pretrain_cfg;
    cfg.mask.strategy = strategy;
    const PretrainResult trained = pretrain(corpus, cfg, init_model<float>(model, cfg.seed));
    for (const auto& task : tasks) {
      for (const auto& rec : probe_sweep(trained.state, task, budgets, heads, probe_options, cfg.threads)) {
        if (rec.head != "mlp") continue;
        rows.push_back({std::string(to_string(strategy)), task.name, 100.0 * rec.accuracy, 100.0 * rec.f1});
      }
    }
  }
  return rows;
}

void write_ablation_csv(const std::filesystem::path& path, std::span<const AblationRow> rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("write_ablation_csv: cannot open " + path.string());
  out << "strategy,task,accuracy,f1\n";
  for (const auto& r : rows) out << r.strategy << ',' << r.task << ',' << r.accuracy << ',' << r.f1 << '\n';
}

}  // namespace csijepa
