// berag: data generation, training, decoding, evaluation and benchmarks.
//
// Every setting is available as a flag and as a key in a `key = value` file
// passed with --config; file entries override flags. Relative output paths
// resolve against $BERAG_REPORT_DIR (default: the working directory).

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "berag/berag.hpp"

#ifndef BERAG_VERSION
#define BERAG_VERSION "dev"
#endif

namespace fs = std::filesystem;
using namespace berag;
using nlohmann::json;

namespace {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kUsage = 2,
  kSchema = 3,
  kCheckpoint = 4,
  kOutOfLength = 5,
  kDiverged = 6,
};

// ---------------------------------------------------------------------------
// Settings shared between flags, config files and the config hash.

class Bindings {
 public:
  explicit Bindings(CLI::App* app) : app_(app) {}

  template <class T>
  CLI::Option* option(const std::string& key, T& ref, const std::string& help, bool hashed = true) {
    auto* opt = app_->add_option("--" + dashed(key), ref, help)->capture_default_str();
    setters_[key] = [&ref, key](const std::string& v) {
      KeyValueConfig kv;
      kv.set(key, v);
      if constexpr (std::is_same_v<T, std::string>) ref = v;
      else if constexpr (std::is_floating_point_v<T>) ref = kv.real(key);
      else ref = static_cast<T>(kv.integer(key));
    };
    if (hashed) getters_[key] = [&ref] {
      std::ostringstream out;
      out.precision(17);
      out << ref;
      return out.str();
    };
    return opt;
  }

  CLI::Option* flag(const std::string& key, bool& ref, const std::string& help) {
    auto* opt = app_->add_flag("--" + dashed(key), ref, help);
    setters_[key] = [&ref, key](const std::string& v) {
      KeyValueConfig kv;
      kv.set(key, v);
      ref = kv.boolean(key);
    };
    getters_[key] = [&ref] { return std::string(ref ? "true" : "false"); };
    return opt;
  }

  void apply_file(const std::string& path) {
    if (path.empty()) return;
    const auto kv = KeyValueConfig::load(path);
    for (const auto& [key, value] : kv.values()) {
      const auto it = setters_.find(key);
      if (it == setters_.end()) throw UsageError("config file " + path + ": unknown key '" + key + "'");
      it->second(value);
    }
  }

  std::string canonical() const {
    std::string out = app_->get_name() + "\n";
    for (const auto& [key, get] : getters_) out += key + "=" + get() + "\n";
    return out;
  }

 private:
  static std::string dashed(std::string s) {
    for (auto& c : s)
      if (c == '_') c = '-';
    return s;
  }

  CLI::App* app_;
  std::map<std::string, std::function<void(const std::string&)>> setters_;
  std::map<std::string, std::function<std::string()>> getters_;
};

// ---------------------------------------------------------------------------
// Output helpers

fs::path report_path(const std::string& p) {
  fs::path path(p);
  if (path.is_absolute()) return path;
  const char* dir = std::getenv("BERAG_REPORT_DIR");
  return dir && *dir ? fs::path(dir) / path : path;
}

void write_atomic(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << content;
    if (!out) throw Error("cannot write " + path.string());
  }
  fs::rename(tmp, path);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

struct Provenance {
  std::string command;
  std::string config_hash;
  std::uint64_t seed = 0;

  json to_json() const {
    return {{"command", command}, {"config_hash", config_hash}, {"seed", seed}, {"version", BERAG_VERSION}};
  }
  std::string jsonl_header() const { return json{{"meta", to_json()}}.dump() + "\n"; }
  std::string csv_header() const {
    return "# command=" + command + " config_hash=" + config_hash + " seed=" + std::to_string(seed) +
           " version=" + BERAG_VERSION + "\n";
  }
};

/// Hash of the effective settings plus the contents of every input file.
Provenance provenance(const Bindings& b, const std::string& command, std::uint64_t seed,
                      const std::vector<std::string>& inputs = {}) {
  std::string basis = b.canonical();
  for (const auto& path : inputs) basis += "input=" + harness::fnv1a_hex(read_file(path)) + "\n";
  return {command, harness::fnv1a_hex(basis), seed};
}

std::string fmt_opt(const std::optional<double>& v) {
  if (!v) return "";
  std::ostringstream out;
  out.precision(6);
  out << *v;
  return out.str();
}

json json_opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::vector<std::size_t> parse_sizes(const std::string& csv) {
  std::vector<std::size_t> out;
  std::stringstream in(csv);
  std::string part;
  while (std::getline(in, part, ',')) {
    KeyValueConfig kv;
    kv.set("k", part);
    out.push_back(kv.integer("k"));
  }
  if (out.empty()) throw UsageError("expected a comma-separated list of integers");
  return out;
}

std::vector<harness::Strategy> parse_strategies(const std::string& csv) {
  std::vector<harness::Strategy> out;
  std::stringstream in(csv);
  std::string part;
  while (std::getline(in, part, ',')) out.push_back(harness::strategy_from_string(part));
  if (out.empty()) throw UsageError("expected a comma-separated list of strategies");
  return out;
}

/// First k documents of every item (all of them when k is 0 or exceeds the list).
std::vector<TrainingItem> top_k(std::vector<TrainingItem> items, std::size_t k) {
  if (k == 0) return items;
  for (auto& item : items)
    if (item.docs.size() > k) item.docs.resize(k);
  return items;
}

// ---------------------------------------------------------------------------
// Commands. Each returns an exit code and prints a JSON summary on stdout.

struct GenData {
  std::string task = "kbqa";
  std::size_t items = 2000;
  std::size_t test_items = 500;
  std::size_t k = 2;
  std::uint64_t seed = 7;
  int distractor_level = 2;
  double gold_present_rate = 1.0;
  std::size_t gold_rank = 0;
  std::size_t m = 10;
  std::size_t doc_len = 16;
  std::size_t vocab_size = 64;
  std::string out_dir = "data";

  void bind(Bindings& b) {
    b.option("task", task, "kbqa or needle")->check(CLI::IsMember({"kbqa", "needle"}));
    b.option("items", items, "training items");
    b.option("test_items", test_items, "test items");
    b.option("k", k, "documents per kbqa item");
    b.option("seed", seed, "generator seed");
    b.option("distractor_level", distractor_level, "0 random, 1 same entity, 2 same entity or attribute");
    b.option("gold_present_rate", gold_present_rate, "share of kbqa items whose list holds the gold document");
    b.option("gold_rank", gold_rank, "1-based gold position; 0 draws it uniformly");
    b.option("m", m, "needle: documents per item");
    b.option("doc_len", doc_len, "needle: tokens per document");
    b.option("vocab_size", vocab_size, "vocabulary size");
    b.option("out_dir", out_dir, "output directory", false);
  }

  int run(const Bindings& b) const {
    if (task != "kbqa" && task != "needle") throw UsageError("unknown task '" + task + "'");
    std::vector<TrainingItem> train, test;
    if (task == "kbqa") {
      harness::KBConfig kc;
      kc.vocab_size = vocab_size;
      kc.seed = seed;
      const harness::SyntheticKB kb(kc);
      harness::ScenarioConfig sc;
      sc.k = k;
      sc.distractor_level = distractor_level;
      sc.gold_present_rate = gold_present_rate;
      sc.gold_rank = gold_rank;
      sc.n_items = items;
      sc.split = harness::FactSplit::train;
      train = harness::gen_kbqa(kb, sc, seed);
      sc.n_items = test_items;
      sc.split = harness::FactSplit::test;
      test = harness::gen_kbqa(kb, sc, seed + 1);
    } else {
      harness::NeedleConfig nc;
      nc.m = m;
      nc.doc_len = doc_len;
      nc.vocab_size = vocab_size;
      nc.n_items = items;
      train = harness::gen_needle(nc, seed);
      nc.n_items = test_items;
      test = harness::gen_needle(nc, seed + 1);
    }
    const auto prov = provenance(b, "gen-data", seed);
    const fs::path dir = report_path(out_dir);
    const std::string train_text = prov.jsonl_header() + harness::to_jsonl(train);
    const std::string test_text = prov.jsonl_header() + harness::to_jsonl(test);
    write_atomic(dir / "train.jsonl", train_text);
    write_atomic(dir / "test.jsonl", test_text);
    json manifest = prov.to_json();
    manifest["task"] = task;
    manifest["files"] = {
        {{"name", "train.jsonl"}, {"items", train.size()}, {"content_hash", harness::fnv1a_hex(train_text)}},
        {{"name", "test.jsonl"}, {"items", test.size()}, {"content_hash", harness::fnv1a_hex(test_text)}}};
    write_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
    std::cout << manifest.dump() << "\n";
    return kOk;
  }
};

struct Train {
  std::string data;
  std::string out = "model.json";
  std::string curve;
  std::size_t k_train = 0;
  std::size_t epochs = 6;
  std::size_t batch_size = 16;
  double backbone_lr = 0.01;
  double prior_head_lr = -1.0;
  std::string optimizer = "adam";
  bool include_prior_loss = false;
  double prior_loss_weight = 1.0;
  double null_doc_augmentation_rate = 0.0;
  bool include_null_doc = false;
  std::size_t dim = 16;
  std::uint64_t model_seed = 42;
  std::uint64_t seed = 1;
  std::size_t threads = default_threads();

  void bind(Bindings& b) {
    b.option("data", data, "training JSONL", false)->required()->check(CLI::ExistingFile);
    b.option("out", out, "checkpoint path", false);
    b.option("curve", curve, "loss-curve CSV (default: <out>.loss.csv)", false);
    b.option("k_train", k_train, "documents per item; 0 takes it from the data");
    b.option("epochs", epochs, "passes over the data");
    b.option("batch_size", batch_size, "items per update");
    b.option("backbone_lr", backbone_lr, "backbone learning rate");
    b.option("prior_head_lr", prior_head_lr, "prior-head learning rate; negative means backbone_lr * 1e-2");
    b.option("optimizer", optimizer, "sgd or adam")->check(CLI::IsMember({"sgd", "adam"}));
    b.flag("include_prior_loss", include_prior_loss, "add the relevance cross-entropy on the prior head");
    b.option("prior_loss_weight", prior_loss_weight, "weight of the prior loss");
    b.option("null_doc_augmentation_rate", null_doc_augmentation_rate, "share of items whose gold becomes the empty passage");
    b.flag("include_null_doc", include_null_doc, "append the empty passage to every training list");
    b.option("dim", dim, "tiny backend width");
    b.option("model_seed", model_seed, "initialization seed");
    b.option("seed", seed, "shuffling and augmentation seed");
    b.option("threads", threads, "worker threads", false);
  }

  int run(const Bindings& b) const {
    auto items = harness::read_jsonl(data);
    if (items.empty()) throw UsageError("training data is empty");
    TrainConfig tc;
    tc.k_train = k_train ? k_train : items.front().docs.size();
    tc.epochs = epochs;
    tc.batch_size = batch_size;
    tc.backbone_lr = backbone_lr;
    if (prior_head_lr >= 0.0) tc.prior_head_lr = prior_head_lr;
    tc.optimizer = optimizer_from_string(optimizer);
    tc.include_prior_loss = include_prior_loss;
    tc.prior_loss_weight = prior_loss_weight;
    tc.null_doc_augmentation_rate = null_doc_augmentation_rate;
    tc.include_null_doc = include_null_doc;
    tc.seed = seed;
    tc.threads = threads;
    TinyConfig mc;
    mc.dim = dim;
    mc.seed = model_seed;
    auto bundle = make_tiny_bundle(mc);
    const auto result = berag::train(std::move(items), tc, bundle);

    const auto prov = provenance(b, "train", seed, {data});
    json ckpt = checkpoint::to_json(bundle);
    ckpt["meta"] = prov.to_json();
    write_atomic(report_path(out), ckpt.dump() + "\n");
    const fs::path curve_path = report_path(curve.empty() ? out + ".loss.csv" : curve);
    write_atomic(curve_path, prov.csv_header() + loss_curve_csv(result));

    json summary = prov.to_json();
    summary["checkpoint"] = report_path(out).string();
    summary["epochs"] = result.curve.size();
    summary["final_loss"] = result.curve.back().mean_loss;
    std::cout << summary.dump() << "\n";
    return kOk;
  }
};

struct Decoding {
  std::string data;
  std::string checkpoint;
  std::string strategy = "berag";
  std::size_t k = 0;
  bool prune = false;
  bool deflection = false;
  std::size_t max_new_tokens = 8;
  std::size_t context_limit = 4096;
  std::uint64_t seed = 0;
  std::size_t threads = default_threads();

  void bind(Bindings& b) {
    b.option("data", data, "dataset JSONL", false)->required()->check(CLI::ExistingFile);
    b.option("checkpoint", checkpoint, "model checkpoint", false)->required()->check(CLI::ExistingFile);
    b.option("strategy", strategy, "berag, concat, single or all-deflect")
        ->check(CLI::IsMember({"berag", "concat", "single", "all-deflect"}));
    b.option("k", k, "use the first K documents of each list; 0 keeps all");
    b.flag("prune", prune, "Top-P document pruning during decoding");
    b.flag("deflection", deflection, "append the empty passage and report deflections");
    b.option("max_new_tokens", max_new_tokens, "generation budget");
    b.option("context_limit", context_limit, "concatenation context window in tokens");
    b.option("seed", seed, "recorded in every artifact");
    b.option("threads", threads, "worker threads", false);
  }

  harness::EvalConfig eval_config() const {
    harness::EvalConfig ec;
    ec.strategy = harness::strategy_from_string(strategy);
    ec.decode.top_p_pruning = prune;
    ec.decode.deflection = deflection;
    ec.decode.max_new_tokens = max_new_tokens;
    ec.decode.context_limit = context_limit;
    ec.threads = threads;
    return ec;
  }
};

struct Decode : Decoding {
  std::string answers = "answers.jsonl";
  std::string trace = "trace.jsonl";

  void bind(Bindings& b) {
    Decoding::bind(b);
    b.option("answers", answers, "answers JSONL", false);
    b.option("trace", trace, "per-step trace JSONL", false);
  }

  int run(const Bindings& b) const {
    const auto bundle = checkpoint::load(checkpoint);
    const auto items = top_k(harness::read_jsonl(data), k);
    const auto ev = harness::evaluate(bundle, items, eval_config());
    const auto prov = provenance(b, "decode", seed, {data, checkpoint});
    std::string ans = prov.jsonl_header(), tr = prov.jsonl_header();
    for (const auto& o : ev.outcomes) {
      json j{{"id", o.id}, {"tokens", o.tokens}, {"exact_match", o.exact_match}, {"deflected", o.deflected}};
      if (o.out_of_length) j = json{{"id", o.id}, {"excluded", "out-of-length"}};
      ans += j.dump() + "\n";
      tr += trace_to_jsonl(o.trace, o.id);
    }
    write_atomic(report_path(answers), ans);
    write_atomic(report_path(trace), tr);
    json summary = prov.to_json();
    summary["items"] = ev.report.items;
    summary["evaluated"] = ev.report.evaluated;
    summary["excluded_out_of_length"] = ev.report.out_of_length;
    summary["exact_match"] = json_opt(ev.report.exact_match);
    std::cout << summary.dump() << "\n";
    if (ev.report.out_of_length > 0) {
      std::cerr << "berag: " << ev.report.out_of_length << " of " << ev.report.items
                << " items exceed the context window and were excluded\n";
      return kOutOfLength;
    }
    return kOk;
  }
};

struct Eval : Decoding {
  std::string out = "eval.csv";
  bool strict_rag = false;

  void bind(Bindings& b) {
    Decoding::bind(b);
    b.option("out", out, "metrics CSV", false);
    b.flag("strict_rag", strict_rag, "report the strict RAG score");
  }

  int run(const Bindings& b) const {
    const auto bundle = checkpoint::load(checkpoint);
    const auto items = top_k(harness::read_jsonl(data), k);
    const auto ev = harness::evaluate(bundle, items, eval_config());
    const auto& r = ev.report;
    const auto prov = provenance(b, "eval", seed, {data, checkpoint});
    std::string csv = prov.csv_header();
    csv += "strategy,k,items,evaluated,out_of_length,exact_match,recall_at_k,mean_active_docs";
    if (deflection) csv += ",deflection_accuracy,deflection_f1,tp,fp,fn,tn";
    if (strict_rag) csv += ",strict_rag";
    csv += "\n";
    const std::size_t list_len = items.empty() ? 0 : items.front().docs.size();
    csv += strategy + "," + std::to_string(list_len) + "," + std::to_string(r.items) + "," + std::to_string(r.evaluated) +
           "," + std::to_string(r.out_of_length) + "," + fmt_opt(r.exact_match) + "," + fmt_opt(r.recall_at_k) + "," +
           fmt_opt(r.mean_active_docs);
    if (deflection)
      csv += "," + fmt_opt(r.deflection_accuracy) + "," + fmt_opt(r.deflection_f1) + "," + std::to_string(r.tp) +
             "," + std::to_string(r.fp) + "," + std::to_string(r.fn) + "," + std::to_string(r.tn);
    if (strict_rag) csv += "," + fmt_opt(r.strict_rag);
    csv += "\n";
    write_atomic(report_path(out), csv);

    json summary = prov.to_json();
    summary["exact_match"] = json_opt(r.exact_match);
    summary["recall_at_k"] = json_opt(r.recall_at_k);
    summary["deflection_f1"] = json_opt(r.deflection_f1);
    summary["strict_rag"] = json_opt(r.strict_rag);
    summary["excluded_out_of_length"] = r.out_of_length;
    json positions = json::object();
    for (const auto& [rank, cell] : r.per_position) positions[std::to_string(rank)] = {cell.first, cell.second};
    summary["per_position"] = positions;
    std::cout << summary.dump() << "\n";
    return r.out_of_length > 0 ? kOutOfLength : kOk;
  }
};

struct Bench {
  std::string data;
  std::string checkpoint;
  std::string out = "bench.csv";
  std::string ks = "10,30,50";
  std::string strategies = "berag,concat";
  std::size_t warmup = 8;
  std::size_t max_new_tokens = 8;
  std::size_t context_limit = 4096;
  std::uint64_t seed = 0;

  void bind(Bindings& b) {
    b.option("data", data, "dataset JSONL", false)->required()->check(CLI::ExistingFile);
    b.option("checkpoint", checkpoint, "model checkpoint", false)->required()->check(CLI::ExistingFile);
    b.option("out", out, "latency CSV", false);
    b.option("ks", ks, "comma-separated K values");
    b.option("strategies", strategies, "comma-separated strategies");
    b.option("warmup", warmup, "untimed items before each row");
    b.option("max_new_tokens", max_new_tokens, "generation budget");
    b.option("context_limit", context_limit, "concatenation context window in tokens");
    b.option("seed", seed, "recorded in every artifact");
  }

  int run(const Bindings& b) const {
    const auto bundle = checkpoint::load(checkpoint);
    const auto items = harness::read_jsonl(data);
    harness::BenchConfig bc;
    bc.ks = parse_sizes(ks);
    bc.strategies = parse_strategies(strategies);
    bc.warmup = warmup;
    bc.decode.max_new_tokens = max_new_tokens;
    bc.decode.context_limit = context_limit;
    const auto rows = harness::bench_latency(bundle, items, bc);
    const auto prov = provenance(b, "bench", seed, {data, checkpoint});
    std::string csv = prov.csv_header() +
                      "strategy,k,pruning,items,out_of_length,ms_per_token,mean_active_docs,mean_active_after_3,"
                      "concentrated_share,exact_match,backend_calls,prefill_pairs,decode_pairs\n";
    json table = json::array();
    for (const auto& r : rows) {
      csv += to_string(r.strategy) + "," + std::to_string(r.k) + "," + (r.pruning ? "on" : "off") + "," +
             std::to_string(r.items) + "," + std::to_string(r.out_of_length) + "," + fmt_opt(r.ms_per_token) + "," +
             fmt_opt(r.mean_active_docs) + "," + fmt_opt(r.mean_active_after_3) + "," +
             fmt_opt(r.concentrated_share) + "," + fmt_opt(r.exact_match) + "," +
             std::to_string(r.cost.backend_calls) + "," + std::to_string(r.cost.prefill_pairs) + "," +
             std::to_string(r.cost.decode_pairs) + "\n";
      table.push_back({{"strategy", to_string(r.strategy)}, {"k", r.k}, {"pruning", r.pruning},
                       {"ms_per_token", json_opt(r.ms_per_token)}, {"prefill_pairs", r.cost.prefill_pairs}});
    }
    write_atomic(report_path(out), csv);
    json summary = prov.to_json();
    summary["rows"] = table;
    std::cout << summary.dump() << "\n";
    return kOk;
  }
};

struct Rerank {
  std::string data;
  std::string checkpoint;
  std::string out = "rerank.jsonl";
  std::size_t k = 0;
  std::uint64_t seed = 0;

  void bind(Bindings& b) {
    b.option("data", data, "dataset JSONL", false)->required()->check(CLI::ExistingFile);
    b.option("checkpoint", checkpoint, "model checkpoint", false)->required()->check(CLI::ExistingFile);
    b.option("out", out, "reranked lists JSONL", false);
    b.option("k", k, "use the first K documents of each list; 0 keeps all");
    b.option("seed", seed, "recorded in every artifact");
  }

  int run(const Bindings& b) const {
    const auto bundle = checkpoint::load(checkpoint);
    const auto items = top_k(harness::read_jsonl(data), k);
    const auto prov = provenance(b, "rerank", seed, {data, checkpoint});
    std::string lines = prov.jsonl_header();
    for (const auto& item : items) {
      const auto ranked = harness::rerank_with_prior(item.query, item.docs, *bundle.backend, bundle.prior_head);
      json order = json::array(), scores = json::array();
      for (const auto& r : ranked) {
        order.push_back(r.doc_id);
        scores.push_back(r.logit);
      }
      lines += json{{"id", item.id}, {"order", order}, {"scores", scores}}.dump() + "\n";
    }
    write_atomic(report_path(out), lines);
    const auto r = harness::rerank_recall(bundle, items);
    json summary = prov.to_json();
    summary["items"] = r.items;
    summary["recall_at_1_before"] = r.before();
    summary["recall_at_1_after"] = r.after();
    std::cout << summary.dump() << "\n";
    return kOk;
  }
};

struct PositionSweep : Decoding {
  std::string out = "position_sweep.csv";
  std::size_t bucket_width = 4;
  std::string strategies = "berag,concat";

  void bind(Bindings& b) {
    Decoding::bind(b);
    b.option("out", out, "per-bucket accuracy CSV", false);
    b.option("bucket_width", bucket_width, "positions per bucket");
    b.option("strategies", strategies, "comma-separated strategies");
  }

  int run(const Bindings& b) const {
    const auto bundle = checkpoint::load(checkpoint);
    const auto items = top_k(harness::read_jsonl(data), k);
    if (items.empty()) throw UsageError("dataset is empty");
    const std::size_t kk = items.front().docs.size();
    const auto result = harness::position_sweep(bundle, items, kk, harness::make_buckets(kk, bucket_width),
                                                parse_strategies(strategies), eval_config());
    const auto prov = provenance(b, "position-sweep", seed, {data, checkpoint});
    std::string csv = prov.csv_header() + "strategy,bucket,items,out_of_length,accuracy\n";
    for (const auto& r : result.rows)
      csv += to_string(r.strategy) + "," + r.bucket.label() + "," + std::to_string(r.items) + "," +
             std::to_string(r.out_of_length) + "," + fmt_opt(r.accuracy) + "\n";
    write_atomic(report_path(out), csv);
    json summary = prov.to_json();
    summary["excluded_without_gold"] = result.excluded;
    json same = json::object();
    for (const auto& [s, v] : result.outputs_identical) same[to_string(s)] = v;
    summary["outputs_identical"] = same;
    std::cout << summary.dump() << "\n";
    return kOk;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian ensemble retrieval-augmented generation toolkit"};
  app.set_version_flag("--version", BERAG_VERSION);
  app.require_subcommand(1);

  std::map<CLI::App*, std::pair<std::unique_ptr<Bindings>, std::function<int(const Bindings&)>>> commands;
  std::map<CLI::App*, std::string> config_files;
  auto add = [&](const std::string& name, const std::string& help, auto& cmd) {
    auto* sub = app.add_subcommand(name, help);
    auto bindings = std::make_unique<Bindings>(sub);
    cmd.bind(*bindings);
    sub->add_option("--config", config_files[sub], "key = value file; its entries override flags")
        ->check(CLI::ExistingFile);
    commands[sub] = {std::move(bindings), [&cmd](const Bindings& b) { return cmd.run(b); }};
  };
  GenData gen;
  Train train;
  Decode decode;
  Eval eval;
  Bench bench;
  Rerank rerank;
  PositionSweep sweep;
  add("gen-data", "generate synthetic train/test datasets and a manifest", gen);
  add("train", "train a tiny backend and prior head", train);
  add("decode", "decode a dataset and write answers and traces", decode);
  add("eval", "decode and score a dataset", eval);
  add("bench", "latency and cost counters across K and pruning", bench);
  add("rerank", "reorder retrieval lists by prior score", rerank);
  add("position-sweep", "accuracy with the gold document moved across positions", sweep);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    for (auto& [sub, cmd] : commands) {
      if (!sub->parsed()) continue;
      cmd.first->apply_file(config_files[sub]);
      return cmd.second(*cmd.first);
    }
  } catch (const OutOfLengthError& e) {
    std::cerr << "berag: " << e.what() << "\n";
    return kOutOfLength;
  } catch (const CheckpointError& e) {
    std::cerr << "berag: " << e.what() << "\n";
    return kCheckpoint;
  } catch (const SchemaError& e) {
    std::cerr << "berag: " << e.what() << "\n";
    return kSchema;
  } catch (const TrainingError& e) {
    std::cerr << "berag: " << e.what() << "\n";
    return kDiverged;
  } catch (const UsageError& e) {
    std::cerr << "berag: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "berag: " << e.what() << "\n";
    return kFailure;
  }
  return kUsage;
}
