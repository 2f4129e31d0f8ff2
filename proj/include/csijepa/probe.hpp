#pragma once

#include "csijepa/config.hpp"
#include "csijepa/net.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace csijepa {

enum class HeadKind { Linear, Mlp };

std::string_view to_string(HeadKind kind) noexcept;
HeadKind parse_head_kind(std::string_view tag);

/// LayerNorm over the pooled vector followed by a linear or 2-layer GELU MLP
/// classifier. `fc2` is unused for the linear head.
struct ProbeHead {
  HeadKind kind = HeadKind::Linear;
  NormParams<float> norm;
  LinearParams<float> fc1;
  LinearParams<float> fc2;

  [[nodiscard]] int num_classes() const {
    return kind == HeadKind::Linear ? fc1.out_dim() : fc2.out_dim();
  }
};

template <typename F, typename... H>
void visit(std::string_view prefix, F&& f, H&... heads)
  requires(std::is_same_v<std::remove_const_t<H>, ProbeHead> && ...)
{
  const std::string base(prefix);
  visit(base + ".norm", f, heads.norm...);
  visit(base + ".fc1", f, heads.fc1...);
  if (std::get<0>(std::forward_as_tuple(heads...)).kind == HeadKind::Mlp) visit(base + ".fc2", f, heads.fc2...);
}

ProbeHead init_probe_head(HeadKind kind, int input_dim, int num_classes, int hidden_dim, CounterRng& rng);

/// Logits for a batch of pooled vectors (rows).
Mat<float> head_logits(const ProbeHead& head, const Mat<float>& pooled);

// ---------------------------------------------------------------------------

/// Mean over all N token latents of the frozen online encoder, unmasked.
RowVec<float> embed_pool(const EncoderParams<float>& encoder, const PatchConfig& cfg,
                         const PositionalTable<float>& positions, const CsiWindow& window);

/// `embed_pool` for every window, one row each. Windows are independent,
/// so the result does not depend on `threads`.
Mat<float> embed_all(const EncoderParams<float>& encoder, const PatchConfig& cfg, std::span<const CsiWindow> windows,
                     int threads = 1);

/// Class-stratified, nested subset of size `budget`: per-class seeded
/// permutations interleaved round-robin by class, truncated. The subset for a
/// smaller budget is always a prefix of the subset for a larger one.
std::vector<int> budget_indices(std::span<const int> labels, int num_classes, std::size_t budget, std::uint64_t seed);

struct ProbeOptions {
  HeadKind kind = HeadKind::Linear;
  int hidden_dim = 256;
  double lr = 1e-3;
  double weight_decay = 1e-4;
  int batch_size = 32;
  int max_epochs = 20;
  int patience = 5;
  std::uint64_t seed = 0;
};

struct ProbeFit {
  ProbeHead head;
  int epochs_ran = 0;
  int best_epoch = 0;
  double best_val_accuracy = 0.0;
  std::size_t train_count = 0;
  std::vector<int> absent_classes;  ///< classes with no sample in the budgeted subset
};

/// Trains a head on pooled features of the budgeted subset with AdamW and
/// cross-entropy; keeps the head with the best validation accuracy (ties
/// broken by lower validation loss) and stops after `patience` epochs
/// without improvement.
ProbeFit train_probe(const Mat<float>& train_features, std::span<const int> train_labels,
                     const Mat<float>& val_features, std::span<const int> val_labels, int num_classes,
                     std::size_t budget, const ProbeOptions& options);

std::vector<int> predict(const ProbeHead& head, const Mat<float>& features);

struct Evaluation {
  double accuracy = 0.0;
  double weighted_f1 = 0.0;
  Eigen::MatrixXi confusion;  ///< rows = truth, cols = prediction
  std::vector<int> support;
};

Evaluation evaluate(std::span<const int> truth, std::span<const int> predicted, int num_classes);

/// Raw-feature baseline: class means of flattened windows, predict nearest.
class NearestCentroid {
 public:
  void fit(std::span<const CsiWindow> windows, std::span<const int> labels, int num_classes);
  [[nodiscard]] int predict(const CsiWindow& window) const;
  [[nodiscard]] std::vector<int> predict(std::span<const CsiWindow> windows) const;

 private:
  std::vector<Eigen::VectorXd> centroids_;
};

// ---------------------------------------------------------------------------

struct ProbeRecord {
  std::string task;
  std::string head;
  std::int64_t budget = 0;
  std::uint64_t seed = 0;
  double accuracy = 0.0;  ///< fraction in [0, 1]
  double f1 = 0.0;        ///< weighted F1 in [0, 1]
  int epochs_ran = 0;
};

void write_probe_record(const std::filesystem::path& path, const ProbeRecord& record);
ProbeRecord read_probe_record(const std::filesystem::path& path);

struct LabeledSet {
  std::vector<CsiWindow> windows;
  std::vector<int> labels;
};

struct ProbeTask {
  std::string name;
  int num_classes = 0;
  LabeledSet train;
  LabeledSet val;
  LabeledSet test;
};

/// Budget sweep for one task: for every head kind and budget, fits on the
/// frozen encoder's pooled features and evaluates on the test split. Also
/// emits a `raw-centroid` baseline row per budget. The encoder checksum is
/// compared before and after; a mismatch throws.
std::vector<ProbeRecord> probe_sweep(const ModelState<float>& frozen, const ProbeTask& task,
                                     std::span<const std::int64_t> budgets, std::span<const HeadKind> heads,
                                     const ProbeOptions& base_options, int threads = 1);

/// Reads probe_hidden, probe_lr, probe_weight_decay, probe_batch, probe_epochs,
/// probe_patience and seed.
ProbeOptions probe_options_from(const KeyValueConfig& kv);

/// Default budget grid {10, 100, 500, 1000, B_max} with B_max = min(train size, 10000),
/// dropping entries above the training split size.
std::vector<std::int64_t> default_budgets(std::size_t train_size);

}  // namespace csijepa
