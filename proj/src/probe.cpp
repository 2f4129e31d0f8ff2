#include "csijepa/probe.hpp"

#include "csijepa/trainer.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <numeric>
#include <thread>

namespace csijepa {

std::string_view to_string(HeadKind kind) noexcept { return kind == HeadKind::Linear ? "linear" : "mlp"; }

HeadKind parse_head_kind(std::string_view tag) {
  if (tag == "linear") return HeadKind::Linear;
  if (tag == "mlp") return HeadKind::Mlp;
  throw Error("unknown head kind '" + std::string(tag) + "' (expected linear|mlp)");
}

ProbeHead init_probe_head(HeadKind kind, int input_dim, int num_classes, int hidden_dim, CounterRng& rng) {
  if (num_classes < 2) throw Error("probe head: need at least 2 classes");
  ProbeHead h;
  h.kind = kind;
  h.norm = NormParams<float>::identity(input_dim);
  if (kind == HeadKind::Linear) {
    h.fc1 = make_linear_fan_in<float>(input_dim, num_classes, rng);
  } else {
    h.fc1 = make_linear_fan_in<float>(input_dim, hidden_dim, rng);
    h.fc2 = make_linear_fan_in<float>(hidden_dim, num_classes, rng);
  }
  return h;
}

namespace {

struct HeadCache {
  NormCache<float> norm;
  Mat<float> normed;
  Mat<float> hidden;
  Mat<float> act;
};

Mat<float> head_forward(const ProbeHead& h, const Mat<float>& x, HeadCache* cache) {
  Mat<float> normed = layer_norm(x, h.norm, cache ? &cache->norm : nullptr);
  Mat<float> out;
  if (h.kind == HeadKind::Linear) {
    out = linear(normed, h.fc1);
  } else {
    Mat<float> hidden = linear(normed, h.fc1);
    Mat<float> act = gelu(hidden);
    out = linear(act, h.fc2);
    if (cache) {
      cache->hidden = std::move(hidden);
      cache->act = std::move(act);
    }
  }
  if (cache) cache->normed = std::move(normed);
  return out;
}

void head_backward(const ProbeHead& h, const HeadCache& c, const Mat<float>& dlogits, ProbeHead& g) {
  Mat<float> dnormed;
  if (h.kind == HeadKind::Linear) {
    dnormed = linear_backward(dlogits, c.normed, h.fc1, g.fc1);
  } else {
    const Mat<float> dact = linear_backward(dlogits, c.act, h.fc2, g.fc2);
    dnormed = linear_backward(gelu_backward(dact, c.hidden), c.normed, h.fc1, g.fc1);
  }
  layer_norm_backward(dnormed, h.norm, c.norm, g.norm);
}

/// Mean cross-entropy; writes softmax probabilities into `probs`.
double cross_entropy(const Mat<float>& logits, std::span<const int> labels, Mat<float>& probs) {
  probs = logits;
  softmax_rows(probs);
  double loss = 0.0;
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    loss -= std::log(std::max(static_cast<double>(probs(r, labels[r])), 1e-30));
  }
  return loss / static_cast<double>(probs.rows());
}

std::vector<int> argmax_rows(const Mat<float>& logits) {
  std::vector<int> out(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    Eigen::Index best = 0;
    logits.row(r).maxCoeff(&best);
    out[r] = static_cast<int>(best);
  }
  return out;
}

}  // namespace

Mat<float> head_logits(const ProbeHead& head, const Mat<float>& pooled) { return head_forward(head, pooled, nullptr); }

std::vector<int> predict(const ProbeHead& head, const Mat<float>& features) {
  return argmax_rows(head_logits(head, features));
}

RowVec<float> embed_pool(const EncoderParams<float>& encoder, const PatchConfig& cfg,
                         const PositionalTable<float>& positions, const CsiWindow& window) {
  return encode(encoder, embed_tokens(encoder, window, cfg, positions)).colwise().mean();
}

Mat<float> embed_all(const EncoderParams<float>& encoder, const PatchConfig& cfg, std::span<const CsiWindow> windows,
                     int threads) {
  const auto positions = sincos_positions<float>(cfg);
  Mat<float> out(static_cast<Eigen::Index>(windows.size()), cfg.embed_dim());
  const auto workers = static_cast<std::size_t>(std::max(1, threads));
  auto run = [&](std::size_t first) {
    for (std::size_t i = first; i < windows.size(); i += workers) {
      out.row(static_cast<Eigen::Index>(i)) = embed_pool(encoder, cfg, positions, windows[i]);
    }
  };
  if (workers == 1) {
    run(0);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(run, w);
  }
  return out;
}

std::vector<int> budget_indices(std::span<const int> labels, int num_classes, std::size_t budget, std::uint64_t seed) {
  if (budget > labels.size()) {
    throw Error("budget " + std::to_string(budget) + " exceeds training split of " + std::to_string(labels.size()));
  }
  std::vector<std::vector<int>> per_class(static_cast<std::size_t>(num_classes));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes) throw Error("budget_indices: label out of range");
    per_class[labels[i]].push_back(static_cast<int>(i));
  }
  const CounterRng root(seed);
  std::size_t longest = 0;
  for (int c = 0; c < num_classes; ++c) {
    auto& members = per_class[c];
    CounterRng rng = root.split(static_cast<std::uint64_t>(c));
    for (std::size_t i = members.size(); i > 1; --i) std::swap(members[i - 1], members[rng.below(i)]);
    longest = std::max(longest, members.size());
  }
  std::vector<int> out;
  out.reserve(budget);
  for (std::size_t round = 0; round < longest && out.size() < budget; ++round) {
    for (int c = 0; c < num_classes && out.size() < budget; ++c) {
      if (round < per_class[c].size()) out.push_back(per_class[c][round]);
    }
  }
  return out;
}

ProbeFit train_probe(const Mat<float>& train_features, std::span<const int> train_labels,
                     const Mat<float>& val_features, std::span<const int> val_labels, int num_classes,
                     std::size_t budget, const ProbeOptions& options) {
  if (train_features.rows() != static_cast<Eigen::Index>(train_labels.size()) ||
      val_features.rows() != static_cast<Eigen::Index>(val_labels.size())) {
    throw Error("train_probe: feature and label counts differ");
  }
  if (val_labels.empty()) throw Error("train_probe: empty validation split");
  const CounterRng root(options.seed);
  const std::vector<int> subset = budget_indices(train_labels, num_classes, budget, options.seed);

  ProbeFit fit;
  fit.train_count = subset.size();
  std::vector<bool> seen(static_cast<std::size_t>(num_classes), false);
  for (int i : subset) seen[train_labels[i]] = true;
  for (int c = 0; c < num_classes; ++c) {
    if (!seen[c]) fit.absent_classes.push_back(c);
  }

  CounterRng init_rng = root.split(1);
  ProbeHead head = init_probe_head(options.kind, static_cast<int>(train_features.cols()), num_classes,
                                   options.hidden_dim, init_rng);
  ProbeHead m = zeros_like(head);
  ProbeHead v = zeros_like(head);
  AdamWConfig opt{options.lr, options.weight_decay};

  double best_acc = -1.0;
  double best_loss = std::numeric_limits<double>::infinity();
  int since_best = 0;
  std::int64_t step = 0;
  CounterRng shuffle_root = root.split(2);
  std::vector<int> order = subset;
  Mat<float> probs;

  for (int epoch = 0; epoch < options.max_epochs; ++epoch) {
    CounterRng shuffle = shuffle_root.split(static_cast<std::uint64_t>(epoch));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(options.batch_size));
      const std::span<const int> batch(order.data() + start, end - start);
      const Mat<float> x = gather_rows(train_features, batch);
      std::vector<int> y;
      for (int i : batch) y.push_back(train_labels[i]);

      HeadCache cache;
      const Mat<float> logits = head_forward(head, x, &cache);
      cross_entropy(logits, y, probs);
      Mat<float> dlogits = probs;
      for (Eigen::Index r = 0; r < dlogits.rows(); ++r) dlogits(r, y[r]) -= 1.0f;
      dlogits /= static_cast<float>(dlogits.rows());
      ProbeHead g = zeros_like(head);
      head_backward(head, cache, dlogits, g);
      adamw_update(head, g, m, v, ++step, opt);
    }
    fit.epochs_ran = epoch + 1;

    const Mat<float> val_logits = head_logits(head, val_features);
    const double val_loss = cross_entropy(val_logits, val_labels, probs);
    const auto pred = argmax_rows(val_logits);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == val_labels[i];
    const double acc = static_cast<double>(correct) / static_cast<double>(pred.size());

    if (acc > best_acc || (acc == best_acc && val_loss < best_loss)) {
      best_acc = acc;
      best_loss = val_loss;
      fit.head = head;
      fit.best_epoch = epoch + 1;
      since_best = 0;
    } else if (++since_best >= options.patience) {
      break;
    }
  }
  fit.best_val_accuracy = best_acc;
  return fit;
}

Evaluation evaluate(std::span<const int> truth, std::span<const int> predicted, int num_classes) {
  if (truth.empty()) throw Error("evaluate: empty test split");
  if (truth.size() != predicted.size()) throw Error("evaluate: prediction count differs from label count");
  Evaluation e;
  e.confusion = Eigen::MatrixXi::Zero(num_classes, num_classes);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || truth[i] >= num_classes || predicted[i] < 0 || predicted[i] >= num_classes) {
      throw Error("evaluate: class index out of range");
    }
    ++e.confusion(truth[i], predicted[i]);
  }
  const auto total = static_cast<double>(truth.size());
  e.accuracy = e.confusion.diagonal().sum() / total;
  e.support.resize(static_cast<std::size_t>(num_classes));
  for (int c = 0; c < num_classes; ++c) {
    const double tp = e.confusion(c, c);
    const double support = e.confusion.row(c).sum();
    const double predicted_c = e.confusion.col(c).sum();
    e.support[c] = static_cast<int>(support);
    const double precision = predicted_c > 0 ? tp / predicted_c : 0.0;
    const double recall = support > 0 ? tp / support : 0.0;
    const double f1 = precision + recall > 0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
    e.weighted_f1 += support / total * f1;
  }
  return e;
}

void NearestCentroid::fit(std::span<const CsiWindow> windows, std::span<const int> labels, int num_classes) {
  if (windows.empty() || windows.size() != labels.size()) throw Error("NearestCentroid: bad training set");
  const auto dim = static_cast<Eigen::Index>(windows.front().size());
  centroids_.assign(static_cast<std::size_t>(num_classes), Eigen::VectorXd::Zero(dim));
  std::vector<int> counts(static_cast<std::size_t>(num_classes), 0);
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const auto v = windows[i].values();
    centroids_[labels[i]] += Eigen::Map<const Eigen::VectorXf>(v.data(), dim).cast<double>();
    ++counts[labels[i]];
  }
  for (int c = 0; c < num_classes; ++c) {
    if (counts[c] > 0) {
      centroids_[c] /= counts[c];
    } else {
      centroids_[c].setConstant(std::numeric_limits<double>::infinity());  // never nearest
    }
  }
}

int NearestCentroid::predict(const CsiWindow& window) const {
  const auto v = window.values();
  const Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXf>(v.data(), static_cast<Eigen::Index>(v.size())).cast<double>();
  int best = 0;
  double best_dist = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centroids_.size(); ++c) {
    const double d = (x - centroids_[c]).squaredNorm();
    if (d < best_dist) {
      best_dist = d;
      best = static_cast<int>(c);
    }
  }
  return best;
}

std::vector<int> NearestCentroid::predict(std::span<const CsiWindow> windows) const {
  std::vector<int> out;
  out.reserve(windows.size());
  for (const auto& w : windows) out.push_back(predict(w));
  return out;
}

// ---------------------------------------------------------------------------

void write_probe_record(const std::filesystem::path& path, const ProbeRecord& r) {
  const nlohmann::json j = {{"task", r.task},         {"head", r.head}, {"budget", r.budget},
                            {"seed", r.seed},         {"accuracy", r.accuracy}, {"f1", r.f1},
                            {"epochs_ran", r.epochs_ran}};
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("write_probe_record: cannot open " + path.string());
  out << j.dump(2) << '\n';
}

ProbeRecord read_probe_record(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("read_probe_record: cannot open " + path.string());
  try {
    const auto j = nlohmann::json::parse(in);
    ProbeRecord r;
    r.task = j.at("task").get<std::string>();
    r.head = j.at("head").get<std::string>();
    r.budget = j.at("budget").get<std::int64_t>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.accuracy = j.at("accuracy").get<double>();
    r.f1 = j.at("f1").get<double>();
    r.epochs_ran = j.at("epochs_ran").get<int>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error("read_probe_record: " + path.string() + ": " + e.what());
  }
}

ProbeOptions probe_options_from(const KeyValueConfig& kv) {
  ProbeOptions o;
  o.hidden_dim = static_cast<int>(kv.get_int("probe_hidden", o.hidden_dim));
  o.lr = kv.get_double("probe_lr", o.lr);
  o.weight_decay = kv.get_double("probe_weight_decay", o.weight_decay);
  o.batch_size = static_cast<int>(kv.get_int("probe_batch", o.batch_size));
  o.max_epochs = static_cast<int>(kv.get_int("probe_epochs", o.max_epochs));
  o.patience = static_cast<int>(kv.get_int("probe_patience", o.patience));
  o.seed = static_cast<std::uint64_t>(kv.get_int("seed", 0));
  return o;
}

std::vector<std::int64_t> default_budgets(std::size_t train_size) {
  const auto cap = static_cast<std::int64_t>(std::min<std::size_t>(train_size, 10000));
  std::vector<std::int64_t> out;
  for (std::int64_t b : {10, 100, 500, 1000}) {
    if (b < cap) out.push_back(b);
  }
  out.push_back(cap);
  return out;
}

std::vector<ProbeRecord> probe_sweep(const ModelState<float>& frozen, const ProbeTask& task,
                                     std::span<const std::int64_t> budgets, std::span<const HeadKind> heads,
                                     const ProbeOptions& base_options, int threads) {
  const std::uint64_t before = checksum(frozen.online);
  const PatchConfig& cfg = frozen.config.patch;
  const Mat<float> train_x = embed_all(frozen.online, cfg, task.train.windows, threads);
  const Mat<float> val_x = embed_all(frozen.online, cfg, task.val.windows, threads);
  const Mat<float> test_x = embed_all(frozen.online, cfg, task.test.windows, threads);

  std::vector<ProbeRecord> records;
  for (const std::int64_t budget : budgets) {
    for (const HeadKind kind : heads) {
      ProbeOptions opt = base_options;
      opt.kind = kind;
      const ProbeFit fit = train_probe(train_x, task.train.labels, val_x, task.val.labels, task.num_classes,
                                       static_cast<std::size_t>(budget), opt);
      const Evaluation e = evaluate(task.test.labels, predict(fit.head, test_x), task.num_classes);
      records.push_back({task.name, std::string(to_string(kind)), budget, base_options.seed, e.accuracy,
                         e.weighted_f1, fit.epochs_ran});
    }
    const auto subset = budget_indices(task.train.labels, task.num_classes, static_cast<std::size_t>(budget),
                                       base_options.seed);
    std::vector<CsiWindow> raw;
    std::vector<int> raw_labels;
    for (int i : subset) {
      raw.push_back(task.train.windows[i]);
      raw_labels.push_back(task.train.labels[i]);
    }
    NearestCentroid centroid;
    centroid.fit(raw, raw_labels, task.num_classes);
    const Evaluation e = evaluate(task.test.labels, centroid.predict(task.test.windows), task.num_classes);
    records.push_back({task.name, "raw-centroid", budget, base_options.seed, e.accuracy, e.weighted_f1, 0});
  }
  if (checksum(frozen.online) != before) throw Error("probe_sweep: frozen encoder parameters changed");
  return records;
}

}  // namespace csijepa
