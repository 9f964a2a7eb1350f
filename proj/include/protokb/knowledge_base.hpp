#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "protokb/extraction.hpp"
#include "protokb/template.hpp"

namespace protokb {

struct Prototype {
  std::string option_id;
  Eigen::VectorXd embedding;
  std::size_t answer_index = 0;  // position of the 1 in the one-hot answer row
  int support_count = 1;

  bool operator==(const Prototype&) const = default;
};

/// Prototype memory: one max-pooled embedding per covered answer option.
/// Prototypes are ordered by option id.
class PrototypeBank {
 public:
  PrototypeBank() = default;
  PrototypeBank(Eigen::Index dim, Eigen::Index answer_dim, std::vector<Prototype> prototypes,
                long built_at_step, std::uint64_t seed, int k);

  Eigen::Index dim() const { return dim_; }
  Eigen::Index answer_dim() const { return answer_dim_; }
  std::size_t size() const { return prototypes_.size(); }
  bool empty() const { return prototypes_.empty(); }
  long built_at_step() const { return built_at_step_; }
  std::uint64_t seed() const { return seed_; }
  int k() const { return k_; }

  const std::vector<Prototype>& prototypes() const { return prototypes_; }
  const Prototype& operator[](std::size_t i) const { return prototypes_[i]; }
  std::optional<std::size_t> find(std::string_view option_id) const;

  Eigen::VectorXd answer_onehot(std::size_t i) const;

  bool operator==(const PrototypeBank& o) const {
    return dim_ == o.dim_ && answer_dim_ == o.answer_dim_ && built_at_step_ == o.built_at_step_ &&
           seed_ == o.seed_ && k_ == o.k_ && prototypes_ == o.prototypes_;
  }

 private:
  Eigen::Index dim_ = 0;
  Eigen::Index answer_dim_ = 0;
  std::vector<Prototype> prototypes_;
  std::unordered_map<std::string, std::size_t> index_;
  long built_at_step_ = 0;
  std::uint64_t seed_ = 0;
  int k_ = 1;
};

/// Embeds the image of a study. May throw EncoderFailure. Must be safe to
/// call concurrently when bank construction runs with several threads.
using ImageEmbedder = std::function<Eigen::VectorXd(const std::string& study_id)>;

/// Element-wise maximum. Throws EmptyInput / DimensionMismatch.
Eigen::VectorXd aggregate_maxpool(std::span<const Eigen::VectorXd> embeddings);

/// Uniform sample without replacement of min(k, pool size) studies, seeded by
/// (seed, option id) so that every call selects the same members.
std::vector<std::string> sample_pool(const std::vector<std::string>& pool, int k,
                                     std::uint64_t seed, std::string_view option_id);

struct BankBuildOptions {
  int k = 5;
  std::uint64_t seed = 0;
  int threads = 1;
  long step = 0;
};

/// One prototype per non-empty pool. Pools naming options absent from the
/// template are ignored. Deterministic given (pools, embedder, k, seed).
PrototypeBank build_bank(const ExamplePools& pools, const Template& tmpl,
                         const ImageEmbedder& embedder, const BankBuildOptions& options);

/// Re-embeds the same sampled members with a new encoder. The option set,
/// answer rows and support counts are kept; an option whose members can no
/// longer be embedded keeps its previous embedding.
PrototypeBank refresh_bank(const PrototypeBank& bank, const ExamplePools& pools,
                           const ImageEmbedder& embedder, long step, int threads = 1);

/// Same options and support counts with embeddings replaced by seeded N(0, 1) noise.
PrototypeBank randomize_embeddings(const PrototypeBank& bank, std::uint64_t seed);

/// Bank plus extra prototypes; used to probe masking behaviour.
PrototypeBank with_extra_prototypes(const PrototypeBank& bank, std::vector<Prototype> extra);

struct EmaEncoderState {
  Eigen::VectorXd parameters;
  double decay = 0.999;
};

/// new = m * old + (1 - m) * live. Throws DimensionMismatch.
EmaEncoderState ema_update(const Eigen::VectorXd& live, const EmaEncoderState& state);

struct LevelCoverage {
  int level = 1;
  long covered = 0;
  long total = 0;
  int percent = 0;  // floor(100 * covered / total)
};

std::array<LevelCoverage, 3> kb_coverage(const PrototypeBank& bank, const Template& tmpl);
/// Three-row coverage table: level, total, covered, coverage.
std::string format_coverage(const std::array<LevelCoverage, 3>& coverage);

/// Holder that swaps whole bank snapshots; readers never see a partial refresh.
class BankSnapshot {
 public:
  explicit BankSnapshot(PrototypeBank bank)
      : current_(std::make_shared<const PrototypeBank>(std::move(bank))) {}

  std::shared_ptr<const PrototypeBank> get() const {
    std::lock_guard lock(mu_);
    return current_;
  }
  void install(PrototypeBank bank) {
    auto next = std::make_shared<const PrototypeBank>(std::move(bank));
    std::lock_guard lock(mu_);
    current_ = std::move(next);
  }

 private:
  mutable std::mutex mu_;
  std::shared_ptr<const PrototypeBank> current_;
};

/// Text format: header lines (dim, answer_dim, built_at_step, seed, k, count)
/// then one "option_id<TAB>support_count<TAB>v1...<TAB>vd" record per prototype.
std::string serialize_bank(const PrototypeBank& bank);
PrototypeBank parse_bank(std::string_view text, const Template& tmpl);
PrototypeBank load_bank_file(const std::string& path, const Template& tmpl);
void save_bank_file(const PrototypeBank& bank, const std::string& path);

}  // namespace protokb
