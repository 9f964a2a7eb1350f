// protokb: end-to-end pipeline driver. One subcommand per process.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "protokb/errors.hpp"
#include "protokb/experiment.hpp"
#include "protokb/inference.hpp"
#include "protokb/io.hpp"
#include "protokb/knowledge_base.hpp"
#include "protokb/llm_client.hpp"
#include "protokb/metrics.hpp"
#include "protokb/synth.hpp"
#include "protokb/training.hpp"

namespace fs = std::filesystem;
using namespace protokb;
using nlohmann::ordered_json;

namespace {

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::string out;

  std::string extractor = "rule-based";
  LlmConfig llm;

  std::string template_path, corpus_path, lexicon_path, seeds_path, pools_path, features_path, bank_path,
      checkpoint_path, gold_path, predicted_path, studies_path, world_dir;
  std::string variant = "protosr";
  bool no_hierarchy_filter = false;
};

// Config file, then flag overrides.
ExperimentConfig resolve(Options& o) {
  ExperimentConfig c;
  if (!o.config_path.empty()) {
    const auto text = read_text_file(o.config_path);
    c = parse_experiment_config(text);
    try {
      auto j = nlohmann::json::parse(text);
      if (j.contains("extractor")) {
        const auto& e = j["extractor"];
        o.extractor = e.value("backend", o.extractor);
        o.llm.endpoint = e.value("endpoint", o.llm.endpoint);
        o.llm.model = e.value("model", o.llm.model);
        o.llm.timeout_seconds = e.value("timeout_seconds", o.llm.timeout_seconds);
        o.llm.api_key_env = e.value("api_key_env", o.llm.api_key_env);
        o.llm.max_concurrency = e.value("max_concurrency", o.llm.max_concurrency);
      }
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
  }
  if (o.seed) {
    c.synth.seed = *o.seed;
    c.train.seed = *o.seed;
  }
  if (o.threads) c.threads = *o.threads;
  c.synth.validate();
  c.train.validate();
  if (o.extractor != "rule-based" && o.extractor != "llm") {
    throw ConfigError("unknown extractor '" + o.extractor + "' (rule-based | llm)");
  }
  parse_variant(o.variant);  // validates
  return c;
}

void write_resolved(const Options& o, const ExperimentConfig& c) {
  auto j = ordered_json::parse(serialize_experiment_config(c));
  ordered_json e;
  e["backend"] = o.extractor;
  e["endpoint"] = o.llm.endpoint;
  e["model"] = o.llm.model;
  e["timeout_seconds"] = o.llm.timeout_seconds;
  e["api_key_env"] = o.llm.api_key_env;
  e["max_concurrency"] = o.llm.max_concurrency;
  j["extractor"] = e;
  j["variant"] = o.variant;
  write_text_file((fs::path(o.out) / "config.json").string(), j.dump(2) + "\n");
}

std::string out_file(const Options& o, const char* name) { return (fs::path(o.out) / name).string(); }

void cmd_synth(Options& o, const ExperimentConfig& c) {
  auto world = generate(c.synth);
  write_world(world, o.out);
  std::printf("wrote %zu studies (%zu mining, %zu train, %zu test) to %s\n", world.studies.size(),
              world.mining_indices().size(), world.train_indices().size(), world.test_indices().size(),
              o.out.c_str());
}

void cmd_expand_terms(Options& o, const ExperimentConfig&) {
  auto tmpl = load_template_file(o.template_path);
  TerminologyLexicon lex;
  if (o.extractor == "llm") {
    LlmPhraseExpander expander(o.llm);
    lex = expand_terminology(tmpl, &expander);
  } else if (!o.seeds_path.empty()) {
    auto expander = SeedListExpander::from_file(o.seeds_path);
    lex = expand_terminology(tmpl, &expander);
  } else {
    lex = expand_terminology(tmpl, nullptr);
  }
  save_lexicon_file(lex, out_file(o, "lexicon.tsv"));
  std::string conflicts;
  for (const auto& c : lex.conflicts()) conflicts += c + "\n";
  write_text_file(out_file(o, "conflicts.txt"), conflicts);
  if (lex.degraded()) std::fprintf(stderr, "warning: expander unavailable, lexicon holds canonical texts only\n");
  std::printf("%zu phrases, %zu rejected candidates\n", lex.size(), lex.conflicts().size());
}

void cmd_mine(Options& o, const ExperimentConfig& c) {
  auto tmpl = load_template_file(o.template_path);
  auto lex = load_lexicon_file(o.lexicon_path);
  lex.validate(tmpl);
  auto corpus = load_corpus_file(o.corpus_path);
  std::unique_ptr<ConstrainedAnswerProvider> extractor;
  if (o.extractor == "llm") {
    extractor = std::make_unique<LlmExtractor>(o.llm);
  } else {
    extractor = std::make_unique<RuleBasedExtractor>(lex);
  }
  auto mined = mine_corpus(corpus, tmpl, lex, *extractor, c.threads, FilterOptions{!o.no_hierarchy_filter});
  save_extractions_file(mined.filtered, out_file(o, "extractions.jsonl"));
  save_pools_file(mined.pools, out_file(o, "pools.json"));

  std::string stats = "option\tlevel\tpool_size\n";
  for (const auto& opt : tmpl.options()) {
    auto it = mined.pools.find(opt.id);
    stats += opt.id + "\t" + std::to_string(tmpl.option_level(opt.id)) + "\t" +
             std::to_string(it == mined.pools.end() ? 0 : it->second.size()) + "\n";
  }
  for (const auto& s : mined.raw.skipped) stats += "# skipped " + s + "\n";
  write_text_file(out_file(o, "pool_stats.tsv"), stats);
  std::printf("%zu studies mined, %zu skipped, %zu non-empty pools\n", mined.filtered.size(),
              mined.raw.skipped.size(), mined.pools.size());
}

Eigen::Index feature_dim_of(const FeatureTable& f) {
  if (f.empty()) throw EmptyInput("feature table is empty");
  return f.begin()->second.size();
}

void cmd_build_bank(Options& o, const ExperimentConfig& c) {
  auto tmpl = load_template_file(o.template_path);
  auto pools = load_pools_file(o.pools_path);
  auto features = load_features_file(o.features_path);
  Affine<double> encoder;
  long step = 0;
  if (!o.checkpoint_path.empty()) {
    auto ck = parse_checkpoint(read_text_file(o.checkpoint_path));
    encoder = ema_encoder(ck.state);
    step = ck.state.step;
  } else {
    auto dims = c.model.dims(feature_dim_of(features), static_cast<Eigen::Index>(tmpl.num_options()), false);
    encoder = Model<double>::init(dims, c.train.seed).backbone.image;
  }
  BankBuildOptions opts{c.train.k, c.train.seed, c.threads, step};
  auto bank = build_bank(pools, tmpl, make_embedder(encoder, features), opts);
  save_bank_file(bank, out_file(o, "bank.json"));
  auto table = format_coverage(kb_coverage(bank, tmpl));
  write_text_file(out_file(o, "coverage.txt"), table);
  std::fputs(table.c_str(), stdout);
}

void world_defaults(Options& o) {
  if (o.world_dir.empty()) return;
  const fs::path w(o.world_dir);
  if (o.template_path.empty()) o.template_path = (w / "template.json").string();
  if (o.features_path.empty()) o.features_path = (w / "features.tsv").string();
  if (o.gold_path.empty()) o.gold_path = (w / "gold_train.jsonl").string();
}

void cmd_train(Options& o, const ExperimentConfig& c) {
  auto tmpl = load_template_file(o.template_path);
  auto features = load_features_file(o.features_path);
  auto gold = load_reports_file(o.gold_path);
  const auto variant = parse_variant(o.variant);
  ExamplePools pools;
  if (!o.pools_path.empty()) pools = load_pools_file(o.pools_path);
  std::optional<PrototypeBank> bank;
  if (!o.bank_path.empty()) bank = load_bank_file(o.bank_path, tmpl);
  if (o.pools_path.empty() && variant != Variant::kNoKnowledge) {
    if (!bank) throw ConfigError("train needs --pools or --bank for variant " + o.variant);
    std::fprintf(stderr, "warning: no --pools, the bank will not be refreshed\n");
  }

  ExperimentInputs in{&tmpl, &features, o.pools_path.empty() ? nullptr : &pools, gold, {}};
  auto run = train_variant(in, c, variant, bank ? &*bank : nullptr);
  write_text_file(out_file(o, "checkpoint.json"), serialize_checkpoint(run.state, run.dims, c.train));
  save_bank_file(run.bank, out_file(o, "bank.json"));
  write_text_file(out_file(o, "train_log.txt"), run.log);
  std::printf("trained %s for %ld steps\n", o.variant.c_str(), run.state.step);
}

void cmd_populate(Options& o, const ExperimentConfig& c) {
  auto tmpl = load_template_file(o.template_path);
  auto features = load_features_file(o.features_path);
  auto ck = parse_checkpoint(read_text_file(o.checkpoint_path));
  auto bank = load_bank_file(o.bank_path, tmpl);
  std::vector<ImageInput> images;
  if (!o.studies_path.empty()) {
    images = images_for(load_reports_file(o.studies_path), features);
  } else {
    for (const auto& [id, f] : features) images.push_back({id, f});
  }
  auto reports = populate_reports(images, tmpl, ck.state.model, bank, ck.dims.backbone.text_buckets, c.threads);
  save_reports_file(reports, out_file(o, "predictions.jsonl"));
  std::printf("populated %zu reports\n", reports.size());
}

void cmd_evaluate(Options& o, const ExperimentConfig&) {
  auto tmpl = load_template_file(o.template_path);
  auto predicted = load_reports_file(o.predicted_path);
  auto gold = load_reports_file(o.gold_path);
  auto m = evaluate_reports(predicted, gold, tmpl);
  const auto text = format_metrics(m);
  write_text_file(out_file(o, "metrics.txt"), text);
  write_text_file(out_file(o, "confusions.tsv"), format_confusions(option_confusions(predicted, gold, tmpl)));
  std::fputs(text.c_str(), stdout);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prototype-knowledge structured report pipeline"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config_path, "JSON config (sections synth, model, train, extractor)")
        ->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "Overrides synth.seed and train.seed");
    sub->add_option("--threads", o.threads, "Worker threads");
    sub->add_option("--out", o.out, "Output directory")->required();
  };
  auto extractor = [&](CLI::App* sub) {
    sub->add_option("--extractor", o.extractor, "rule-based | llm");
    sub->add_option("--endpoint", o.llm.endpoint, "Chat-completion URL (http)");
    sub->add_option("--model", o.llm.model, "LLM model name");
    sub->add_option("--timeout", o.llm.timeout_seconds, "LLM request timeout in seconds");
  };
  auto in_file = [](CLI::App* sub, const char* flag, std::string& dst, const char* help, bool required) {
    auto* opt = sub->add_option(flag, dst, help)->check(CLI::ExistingFile);
    if (required) opt->required();
  };

  auto* synth = app.add_subcommand("synth", "Generate a synthetic world");
  common(synth);

  auto* expand = app.add_subcommand("expand-terms", "Build the terminology lexicon");
  common(expand);
  extractor(expand);
  in_file(expand, "--template", o.template_path, "Template JSON", true);
  in_file(expand, "--seeds", o.seeds_path, "Seed phrase list (option_id<TAB>phrase)", false);

  auto* mine = app.add_subcommand("mine", "Extract, filter and pool a free-text corpus");
  common(mine);
  extractor(mine);
  in_file(mine, "--template", o.template_path, "Template JSON", true);
  in_file(mine, "--lexicon", o.lexicon_path, "Lexicon TSV", true);
  in_file(mine, "--corpus", o.corpus_path, "Corpus JSONL", true);
  mine->add_flag("--no-hierarchy-filter", o.no_hierarchy_filter, "Keep positive parents without children");

  auto* build = app.add_subcommand("build-bank", "Build the prototype bank");
  common(build);
  in_file(build, "--template", o.template_path, "Template JSON", true);
  in_file(build, "--pools", o.pools_path, "Example pools JSON", true);
  in_file(build, "--features", o.features_path, "Image feature TSV", true);
  in_file(build, "--checkpoint", o.checkpoint_path, "Embed with this checkpoint's EMA encoder", false);

  auto* train_cmd = app.add_subcommand("train", "Train one variant");
  common(train_cmd);
  train_cmd->add_option("--world", o.world_dir, "Directory written by synth")->check(CLI::ExistingDirectory);
  in_file(train_cmd, "--template", o.template_path, "Template JSON", false);
  in_file(train_cmd, "--features", o.features_path, "Image feature TSV", false);
  in_file(train_cmd, "--gold", o.gold_path, "Structured training reports JSONL", false);
  in_file(train_cmd, "--pools", o.pools_path, "Example pools JSON (enables refresh)", false);
  in_file(train_cmd, "--bank", o.bank_path, "Initial bank; built from pools when absent", false);
  train_cmd->add_option("--variant", o.variant, "protosr | no-knowledge | randomized-prototypes | early-fusion-stub");

  auto* populate = app.add_subcommand("populate", "Populate structured reports");
  common(populate);
  in_file(populate, "--template", o.template_path, "Template JSON", true);
  in_file(populate, "--features", o.features_path, "Image feature TSV", true);
  in_file(populate, "--checkpoint", o.checkpoint_path, "Checkpoint JSON", true);
  in_file(populate, "--bank", o.bank_path, "Bank JSON written by train", true);
  in_file(populate, "--studies", o.studies_path, "Reports JSONL naming the studies (default: all features)",
          false);

  auto* evaluate = app.add_subcommand("evaluate", "Score predicted reports against gold");
  common(evaluate);
  in_file(evaluate, "--template", o.template_path, "Template JSON", true);
  in_file(evaluate, "--predicted", o.predicted_path, "Predicted reports JSONL", true);
  in_file(evaluate, "--gold", o.gold_path, "Gold reports JSONL", true);

  CLI11_PARSE(app, argc, argv);

  try {
    world_defaults(o);
    if (train_cmd->parsed() && (o.template_path.empty() || o.features_path.empty() || o.gold_path.empty())) {
      throw ConfigError("train needs --world or all of --template, --features, --gold");
    }
    for (const auto* p : {&o.template_path, &o.features_path, &o.gold_path}) {
      if (!p->empty() && !fs::exists(*p)) throw ConfigError("no such file: " + *p);
    }
    auto config = resolve(o);
    fs::create_directories(o.out);
    write_resolved(o, config);

    if (synth->parsed()) cmd_synth(o, config);
    if (expand->parsed()) cmd_expand_terms(o, config);
    if (mine->parsed()) cmd_mine(o, config);
    if (build->parsed()) cmd_build_bank(o, config);
    if (train_cmd->parsed()) cmd_train(o, config);
    if (populate->parsed()) cmd_populate(o, config);
    if (evaluate->parsed()) cmd_evaluate(o, config);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
