#include "protokb/knowledge_base.hpp"

#include <algorithm>
#include <atomic>
#include <iostream>
#include <random>
#include <sstream>
#include <thread>

#include "protokb/errors.hpp"
#include "protokb/io.hpp"
#include "protokb/text.hpp"

namespace protokb {

PrototypeBank::PrototypeBank(Eigen::Index dim, Eigen::Index answer_dim,
                             std::vector<Prototype> prototypes, long built_at_step,
                             std::uint64_t seed, int k)
    : dim_(dim),
      answer_dim_(answer_dim),
      prototypes_(std::move(prototypes)),
      built_at_step_(built_at_step),
      seed_(seed),
      k_(k) {
  std::sort(prototypes_.begin(), prototypes_.end(),
            [](const Prototype& a, const Prototype& b) { return a.option_id < b.option_id; });
  for (std::size_t i = 0; i < prototypes_.size(); ++i) {
    const auto& p = prototypes_[i];
    require_dims(p.embedding.size(), dim_, "prototype embedding");
    if (static_cast<Eigen::Index>(p.answer_index) >= answer_dim_) {
      throw ValidationError("prototype '" + p.option_id + "' answer index out of range");
    }
    if (p.support_count < 1) throw ValidationError("prototype '" + p.option_id + "' has no support");
    if (!index_.emplace(p.option_id, i).second) {
      throw ValidationError("duplicate prototype for option '" + p.option_id + "'");
    }
  }
}

std::optional<std::size_t> PrototypeBank::find(std::string_view option_id) const {
  auto it = index_.find(std::string(option_id));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

Eigen::VectorXd PrototypeBank::answer_onehot(std::size_t i) const {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(answer_dim_);
  v[static_cast<Eigen::Index>(prototypes_[i].answer_index)] = 1.0;
  return v;
}

Eigen::VectorXd aggregate_maxpool(std::span<const Eigen::VectorXd> embeddings) {
  if (embeddings.empty()) throw EmptyInput("max pooling over an empty set");
  Eigen::VectorXd out = embeddings.front();
  for (const auto& e : embeddings.subspan(1)) {
    require_dims(e.size(), out.size(), "pooled embedding");
    out = out.cwiseMax(e);
  }
  return out;
}

std::vector<std::string> sample_pool(const std::vector<std::string>& pool, int k,
                                     std::uint64_t seed, std::string_view option_id) {
  std::vector<std::string> out;
  std::mt19937_64 rng(derive_seed(seed, option_id));
  std::sample(pool.begin(), pool.end(), std::back_inserter(out),
              static_cast<std::size_t>(std::max(k, 0)), rng);
  return out;
}

namespace {

// Embeds and pools the given members; nullopt when every member fails.
std::optional<std::pair<Eigen::VectorXd, int>> pool_members(const std::vector<std::string>& members,
                                                            const ImageEmbedder& embedder,
                                                            std::string_view option_id,
                                                            bool* any_failed = nullptr) {
  std::vector<Eigen::VectorXd> embs;
  for (const auto& sid : members) {
    try {
      embs.push_back(embedder(sid));
    } catch (const EncoderFailure& e) {
      if (any_failed) *any_failed = true;
      std::cerr << "warning: option " << option_id << ": cannot embed study " << sid << ": "
                << e.what() << "\n";
    }
  }
  if (embs.empty()) return std::nullopt;
  return std::make_pair(aggregate_maxpool(embs), static_cast<int>(embs.size()));
}

template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  if (threads <= 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::jthread> pool;
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) fn(i);
    });
  }
}

}  // namespace

PrototypeBank build_bank(const ExamplePools& pools, const Template& tmpl,
                         const ImageEmbedder& embedder, const BankBuildOptions& options) {
  if (options.k < 1) throw ConfigError("K must be at least 1");
  std::vector<std::pair<std::string, const std::vector<std::string>*>> work;
  for (const auto& [oid, pool] : pools) {
    if (pool.empty()) continue;
    if (!tmpl.has_option(oid)) {
      std::cerr << "warning: pool for unknown option '" << oid << "' ignored\n";
      continue;
    }
    work.emplace_back(oid, &pool);
  }

  std::vector<std::optional<Prototype>> slots(work.size());
  parallel_for(work.size(), options.threads, [&](std::size_t i) {
    const auto& [oid, pool] = work[i];
    auto members = sample_pool(*pool, options.k, options.seed, oid);
    if (auto pooled = pool_members(members, embedder, oid)) {
      slots[i] = Prototype{oid, std::move(pooled->first), tmpl.option_index(oid), pooled->second};
    }
  });

  std::vector<Prototype> protos;
  Eigen::Index dim = -1;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (!slots[i]) {
      std::cerr << "warning: option " << work[i].first << " has no prototype (all samples failed)\n";
      continue;
    }
    if (dim < 0) dim = slots[i]->embedding.size();
    protos.push_back(std::move(*slots[i]));
  }
  if (dim < 0) dim = 0;
  return PrototypeBank(dim, static_cast<Eigen::Index>(tmpl.num_options()), std::move(protos),
                       options.step, options.seed, options.k);
}

PrototypeBank refresh_bank(const PrototypeBank& bank, const ExamplePools& pools,
                           const ImageEmbedder& embedder, long step, int threads) {
  std::vector<Prototype> protos = bank.prototypes();
  parallel_for(protos.size(), threads, [&](std::size_t i) {
    auto& p = protos[i];
    auto it = pools.find(p.option_id);
    if (it == pools.end()) return;
    auto members = sample_pool(it->second, bank.k(), bank.seed(), p.option_id);
    bool failed = false;
    auto pooled = pool_members(members, embedder, p.option_id, &failed);
    if (!pooled || failed || pooled->second != p.support_count) return;
    p.embedding = std::move(pooled->first);
  });
  return PrototypeBank(bank.dim(), bank.answer_dim(), std::move(protos), step, bank.seed(), bank.k());
}

PrototypeBank randomize_embeddings(const PrototypeBank& bank, std::uint64_t seed) {
  std::vector<Prototype> protos = bank.prototypes();
  std::mt19937_64 rng(derive_seed(seed, "randomized-prototypes"));
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& p : protos) {
    for (Eigen::Index i = 0; i < p.embedding.size(); ++i) p.embedding[i] = normal(rng);
  }
  return PrototypeBank(bank.dim(), bank.answer_dim(), std::move(protos), bank.built_at_step(),
                       bank.seed(), bank.k());
}

PrototypeBank with_extra_prototypes(const PrototypeBank& bank, std::vector<Prototype> extra) {
  std::vector<Prototype> protos = bank.prototypes();
  protos.insert(protos.end(), std::make_move_iterator(extra.begin()),
                std::make_move_iterator(extra.end()));
  Eigen::Index dim = bank.empty() && !protos.empty() ? protos.front().embedding.size() : bank.dim();
  return PrototypeBank(dim, bank.answer_dim(), std::move(protos), bank.built_at_step(), bank.seed(),
                       bank.k());
}

EmaEncoderState ema_update(const Eigen::VectorXd& live, const EmaEncoderState& state) {
  require_dims(live.size(), state.parameters.size(), "EMA parameters");
  const double m = state.decay;
  return {m * state.parameters + (1.0 - m) * live, m};
}

std::array<LevelCoverage, 3> kb_coverage(const PrototypeBank& bank, const Template& tmpl) {
  std::array<LevelCoverage, 3> out{};
  for (int l = 0; l < 3; ++l) out[static_cast<std::size_t>(l)].level = l + 1;
  for (const auto& opt : tmpl.options()) {
    auto& row = out[static_cast<std::size_t>(tmpl.option_level(opt.id) - 1)];
    ++row.total;
    if (bank.find(opt.id)) ++row.covered;
  }
  for (auto& row : out) {
    row.percent = row.total == 0 ? 0 : static_cast<int>((100 * row.covered) / row.total);
  }
  return out;
}

std::string format_coverage(const std::array<LevelCoverage, 3>& coverage) {
  std::ostringstream os;
  os << "Level\tTotal categories\tCovered categories\tCoverage\n";
  for (const auto& row : coverage) {
    os << 'L' << row.level << '\t' << row.total << '\t' << row.covered << '\t' << row.percent << "%\n";
  }
  return os.str();
}

std::string serialize_bank(const PrototypeBank& bank) {
  std::string out = "protokb-bank 1\n";
  out += "dim " + std::to_string(bank.dim()) + "\n";
  out += "answer_dim " + std::to_string(bank.answer_dim()) + "\n";
  out += "built_at_step " + std::to_string(bank.built_at_step()) + "\n";
  out += "seed " + std::to_string(bank.seed()) + "\n";
  out += "k " + std::to_string(bank.k()) + "\n";
  out += "prototypes " + std::to_string(bank.size()) + "\n";
  for (const auto& p : bank.prototypes()) {
    out += p.option_id + "\t" + std::to_string(p.support_count);
    for (Eigen::Index i = 0; i < p.embedding.size(); ++i) out += "\t" + format_double(p.embedding[i]);
    out += "\n";
  }
  return out;
}

PrototypeBank parse_bank(std::string_view text, const Template& tmpl) {
  std::istringstream in{std::string(text)};
  std::string line;
  auto header = [&](const std::string& key) {
    if (!std::getline(in, line)) throw ParseError("bank: missing '" + key + "' header");
    auto sp = line.find(' ');
    if (sp == std::string::npos || line.substr(0, sp) != key) {
      throw ParseError("bank: expected '" + key + "' header, got '" + line + "'");
    }
    return line.substr(sp + 1);
  };
  if (header("protokb-bank") != "1") throw ParseError("bank: unsupported version");
  try {
    auto dim = std::stol(header("dim"));
    auto answer_dim = std::stol(header("answer_dim"));
    auto step = std::stol(header("built_at_step"));
    auto seed = std::stoull(header("seed"));
    auto k = std::stoi(header("k"));
    auto count = std::stoul(header("prototypes"));
    if (answer_dim != static_cast<long>(tmpl.num_options())) {
      throw ValidationError("bank answer_dim " + std::to_string(answer_dim) +
                            " does not match template option count " +
                            std::to_string(tmpl.num_options()));
    }
    std::vector<Prototype> protos;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::vector<std::string> f;
      std::size_t start = 0;
      while (true) {
        auto tab = line.find('\t', start);
        f.push_back(line.substr(start, tab - start));
        if (tab == std::string::npos) break;
        start = tab + 1;
      }
      if (static_cast<long>(f.size()) != dim + 2) {
        throw ParseError("bank: record '" + f[0] + "' has wrong width");
      }
      Prototype p;
      p.option_id = f[0];
      p.support_count = std::stoi(f[1]);
      p.answer_index = tmpl.option_index(p.option_id);
      p.embedding.resize(dim);
      for (long i = 0; i < dim; ++i) p.embedding[i] = parse_double(f[static_cast<std::size_t>(i) + 2]);
      protos.push_back(std::move(p));
    }
    if (protos.size() != count) throw ParseError("bank: prototype count mismatch");
    return PrototypeBank(dim, answer_dim, std::move(protos), step, seed, k);
  } catch (const std::invalid_argument& e) {
    throw ParseError(std::string("bank: ") + e.what());
  } catch (const std::out_of_range& e) {
    throw ParseError(std::string("bank: ") + e.what());
  }
}

PrototypeBank load_bank_file(const std::string& path, const Template& tmpl) {
  return parse_bank(read_text_file(path), tmpl);
}

void save_bank_file(const PrototypeBank& bank, const std::string& path) {
  write_text_file(path, serialize_bank(bank));
}

}  // namespace protokb
