#include "flare/cli.hpp"

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "flare/bundle.hpp"
#include "flare/eval.hpp"
#include "flare/gradcheck.hpp"
#include "flare/hash.hpp"
#include "flare/serve.hpp"
#include "flare/synth.hpp"
#include "flare/train.hpp"

// After the flare headers: resolv.h, pulled in by httplib, defines _res.
#include <httplib.h>

namespace flare::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Context {
  fs::path workdir = ".";
  std::vector<std::string> args;
  std::ostream& out;
  std::ostream& err;

  fs::path resolve(const std::string& p) const {
    const fs::path path(p);
    return path.is_absolute() ? path : workdir / path;
  }
};

// Manifests record paths as given and inputs by content hash, so runs in
// different work directories with the same inputs agree byte for byte.
json manifest(const Context& ctx, const std::string& command, json config, json inputs) {
  return {{"tool", "flare"},
          {"version", kVersion},
          {"command", command},
          {"arguments", ctx.args},
          {"config", std::move(config)},
          {"inputs", std::move(inputs)}};
}

json input_record(const Context& ctx, const std::string& path) {
  return {{"path", path}, {"sha256", sha256_file(ctx.resolve(path))}};
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << j.dump(2) << '\n';
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  try {
    return json::parse(is);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

// --- preprocess ----------------------------------------------------------------

struct PreprocessArgs {
  std::string reviews, meta, out;
  std::string length_mode = "trim51";
  std::string split = "leave-one-out";
  bool require_title = false;
  std::uint64_t seed = 0;
};

SplitMode split_mode_from(const std::string& s) {
  if (s == "leave-one-out") return SplitMode::LeaveOneOut;
  if (s == "unseen-users") return SplitMode::UnseenUsers;
  throw std::invalid_argument("split must be leave-one-out or unseen-users");
}

int do_preprocess(const Context& ctx, const PreprocessArgs& a) {
  std::ifstream reviews(ctx.resolve(a.reviews), std::ios::binary);
  if (!reviews) throw std::runtime_error("cannot open reviews file " + a.reviews);
  std::ifstream meta(ctx.resolve(a.meta), std::ios::binary);
  if (!meta) throw std::runtime_error("cannot open metadata file " + a.meta);
  auto parsed = parse_reviews(reviews, meta);

  PreprocessOptions opts;
  opts.mode = a.length_mode == "filter50" ? LengthMode::Filter50 : LengthMode::Trim51;
  opts.require_title = a.require_title;
  const auto mode = split_mode_from(a.split);

  CorpusBundle b;
  b.sequences = build_sequences(parsed.sequences, parsed.vocab, opts);
  b.vocab = std::move(parsed.vocab);
  b.splits = mode == SplitMode::LeaveOneOut ? split_leave_one_out(b.sequences) : split_unseen_users(b.sequences, a.seed);
  const json config = {{"length_mode", a.length_mode},
                       {"require_title", a.require_title},
                       {"split", a.split},
                       {"seed", a.seed}};
  b.meta = {{"source", "reviews"},
            {"duplicate_metadata", parsed.duplicate_metadata},
            {"missing_metadata", parsed.missing_metadata},
            {"manifest", manifest(ctx, "preprocess", config,
                                  {{"reviews", input_record(ctx, a.reviews)}, {"meta", input_record(ctx, a.meta)}})}};
  save_bundle(b, ctx.resolve(a.out));
  ctx.out << "items " << b.vocab.size() << "\nusers " << b.sequences.size() << "\ntrain " << b.splits.train.size()
          << "\nvalid " << b.splits.valid.size() << "\ntest " << b.splits.test.size() << "\nmissing_metadata "
          << parsed.missing_metadata << "\nduplicate_metadata " << parsed.duplicate_metadata << '\n';
  return kExitOk;
}

// --- synth -----------------------------------------------------------------------

int do_synth(const Context& ctx, const SynthSpec& spec, const std::string& spec_file, const std::string& out) {
  auto b = make_synthetic_corpus(spec);
  json inputs = json::object();
  if (!spec_file.empty()) inputs["spec"] = input_record(ctx, spec_file);
  b.meta["manifest"] = manifest(ctx, "synth", spec.to_json(), inputs);
  save_bundle(b, ctx.resolve(out));
  ctx.out << "items " << b.vocab.size() << "\nusers " << b.sequences.size() << "\nbundle "
          << sha256_file(ctx.resolve(out)) << '\n';
  return kExitOk;
}

// --- train -----------------------------------------------------------------------

int do_train(const Context& ctx, const TrainConfig& cfg, const std::string& bundle_path, const std::string& out_dir,
             bool dry_run) {
  if (dry_run) {
    ctx.out << cfg.to_json().dump(2) << '\n';
    return kExitOk;
  }
  const auto bundle = load_bundle(ctx.resolve(bundle_path));
  auto text_cfg = cfg.text;
  if (!text_cfg.embeddings.empty()) text_cfg.embeddings = ctx.resolve(text_cfg.embeddings).string();
  const auto text = make_text_resources(text_cfg, cfg.d_text, bundle.vocab);

  const auto dir = ctx.resolve(out_dir);
  fs::create_directories(dir);
  json inputs = {{"bundle", input_record(ctx, bundle_path)}};
  if (!cfg.text.embeddings.empty()) inputs["embeddings"] = input_record(ctx, cfg.text.embeddings);
  TrainOptions opts;
  opts.out_dir = dir;
  opts.manifest = manifest(ctx, "train", cfg.to_json(), inputs);
  std::ofstream log(dir / "train_log.jsonl", std::ios::binary);
  if (!log) throw std::runtime_error("cannot write the training log in " + out_dir);
  opts.log = &log;
  const std::size_t report_every = std::max<std::size_t>(cfg.total_steps / 20, 1);
  opts.on_step = [&](const TrainLogRecord& r) {
    if (r.step % report_every == 0 || r.step == cfg.total_steps) {
      ctx.err << "step " << r.step << " l_mlm " << r.l_mlm;
      if (r.l_c) ctx.err << " l_c " << *r.l_c;
      ctx.err << '\n';
    }
  };
  const auto result = train(cfg, bundle, text, opts);

  json m = opts.manifest;
  json outputs = json::object();
  for (const auto& p : result.checkpoints) {
    outputs[fs::relative(p, dir).generic_string()] = sha256_file(p);
  }
  m["outputs"] = std::move(outputs);
  write_json(dir / "manifest.json", m);
  const auto final_ckpt = dir / "final.ckpt";
  ctx.out << "final_l_mlm " << result.log.back().l_mlm << "\ncheckpoint " << sha256_file(final_ckpt) << '\n';
  return kExitOk;
}

// --- eval ---------------------------------------------------------------------------

struct EvalArgs {
  std::string bundle, checkpoint, out, csv;
  std::string split = "test";
  std::string critique = "none";
  std::string idcg = "full";
  std::size_t max_queries = 0;
  std::size_t level = 4;
  std::size_t min_items = 5;
  std::uint64_t seed = 0;
  bool queries = false;
};

int do_eval(const Context& ctx, const EvalArgs& a, bool mutate) {
  const auto bundle = load_bundle(ctx.resolve(a.bundle));
  const auto trained = load_trained(ctx.resolve(a.checkpoint), bundle.vocab);

  EvalOptions eo;
  eo.split = a.split == "valid" ? EvalSplit::Valid : EvalSplit::Test;
  eo.critique = critique_level_from_string(a.critique);
  eo.idcg = idcg_mode_from_string(a.idcg);
  eo.max_queries = a.max_queries;
  eo.seed = a.seed;
  if (mutate) eo.mutation = MutationSpec{a.level, a.min_items};

  const ModelScorer scorer(trained.model, trained.model.config().fusion, trained.text.context(),
                           trained.checkpoint_hash);
  const auto report = evaluate(scorer, bundle, eo);

  json doc = report.to_json(a.queries);
  doc["manifest"] = manifest(ctx, mutate ? "mutate-eval" : "eval", eo.to_json(),
                             {{"bundle", input_record(ctx, a.bundle)},
                              {"checkpoint", {{"path", a.checkpoint}, {"sha256", trained.checkpoint_hash}}}});
  if (!a.out.empty()) write_json(ctx.resolve(a.out), doc);
  if (!a.csv.empty()) {
    const auto path = ctx.resolve(a.csv);
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + a.csv);
    report.write_csv(os);
  }

  ctx.out << std::setprecision(6) << std::fixed;
  for (const auto& [name, value] : report.metrics) ctx.out << name << ' ' << value << '\n';
  ctx.out << "queries " << report.queries.size() << "\nskipped " << report.skipped << "\nfallbacks "
          << report.fallbacks << '\n';
  if (!a.out.empty()) ctx.out << "report " << sha256_file(ctx.resolve(a.out)) << '\n';

  const auto problems = report.check_invariants();
  for (const auto& p : problems) ctx.err << "invariant violated: " << p << '\n';
  return problems.empty() ? kExitOk : kExitFailure;
}

// --- grad-check -----------------------------------------------------------------------

int do_grad_check(const Context& ctx, std::uint64_t seed, double eps, double tolerance) {
  const auto rep = model_grad_check(seed, eps, tolerance);
  ctx.out << std::scientific << std::setprecision(3);
  for (const auto& e : rep.tensors) {
    ctx.out << std::left << std::setw(48) << e.name << " n=" << e.count << " rel " << e.max_rel_err << " abs "
            << e.max_abs_err << '\n';
  }
  ctx.out << "tensors " << rep.tensors.size() << "\nmax_rel_err " << rep.max_rel_err << "\ntolerance "
          << rep.tolerance << '\n'
          << (rep.passed() ? "PASS" : "FAIL") << '\n';
  return rep.passed() ? kExitOk : kExitFailure;
}

// --- serve ---------------------------------------------------------------------------

httplib::Server* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

int do_serve(const Context& ctx, const std::string& bundle, const std::string& checkpoint, const std::string& host,
             int port) {
  std::optional<fs::path> ckpt;
  if (!checkpoint.empty()) ckpt = ctx.resolve(checkpoint);
  FlareService service(load_snapshot(ctx.resolve(bundle), ckpt));
  httplib::Server server;
  service.mount(server);
  g_server = &server;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  ctx.err << "serving on http://" << host << ':' << port << '\n';
  const bool ok = server.listen(host, port);
  g_server = nullptr;
  if (!ok && !server.is_running()) {
    ctx.err << "error: could not listen on " << host << ':' << port << '\n';
    return kExitFailure;
  }
  return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Flare: hybrid sequential recommendation with text and critiques", "flare"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);
  std::string workdir = ".";
  app.add_option("--workdir", workdir, "Directory that relative paths resolve against")->capture_default_str();

  // preprocess
  PreprocessArgs pre;
  auto* c_pre = app.add_subcommand("preprocess", "Build a corpus bundle from review and metadata JSON lines");
  c_pre->add_option("--reviews", pre.reviews, "Reviews file (JSON lines)")->required();
  c_pre->add_option("--meta", pre.meta, "Item metadata file (JSON lines)")->required();
  c_pre->add_option("--out", pre.out, "Output bundle path")->required();
  c_pre->add_option("--length-mode", pre.length_mode, "trim51 keeps the last 51 events; filter50 drops longer users")
      ->check(CLI::IsMember({"trim51", "filter50"}))
      ->capture_default_str();
  c_pre->add_option("--split", pre.split, "Evaluation split")
      ->check(CLI::IsMember({"leave-one-out", "unseen-users"}))
      ->capture_default_str();
  c_pre->add_flag("--require-title", pre.require_title, "Drop items without a title");
  c_pre->add_option("--seed", pre.seed, "Seed for the unseen-users split")->capture_default_str();

  // synth
  SynthSpec spec;
  std::string synth_spec_file, synth_out, synth_structure, synth_split;
  auto* c_synth = app.add_subcommand("synth", "Generate a synthetic corpus bundle");
  c_synth->add_option("--spec", synth_spec_file, "JSON spec; flags override its fields");
  c_synth->add_option("--structure", synth_structure, "markov or category")
      ->check(CLI::IsMember({"markov", "category"}));
  auto* o_items = c_synth->add_option("--items", spec.n_items, "Number of items");
  auto* o_users = c_synth->add_option("--users", spec.n_users, "Number of users");
  auto* o_minlen = c_synth->add_option("--min-length", spec.min_length, "Shortest sequence");
  auto* o_maxlen = c_synth->add_option("--max-length", spec.max_length, "Longest sequence");
  auto* o_sseed = c_synth->add_option("--seed", spec.seed, "Generator seed");
  auto* o_branch = c_synth->add_option("--branching", spec.branching, "Category fan-out per level, e.g. 3,2,2,2")
                       ->delimiter(',');
  auto* o_jump = c_synth->add_option("--jump", spec.jump_probability, "Probability of leaving the scheduled leaf");
  auto* o_jlev = c_synth->add_option("--jump-levels", spec.jump_levels, "Levels a jump keeps from the scheduled leaf");
  c_synth->add_option("--split", synth_split, "Evaluation split")
      ->check(CLI::IsMember({"leave-one-out", "unseen-users"}));
  c_synth->add_option("--out", synth_out, "Output bundle path")->required();

  // train
  std::string preset, config_file, bundle_path, out_dir, fusion, masking, embeddings, reducer;
  std::size_t steps = 0, batch = 0, ckpt_every = 0;
  double lr = 0, wd = 0, alpha = 0;
  std::uint64_t train_seed = 0;
  bool contrastive = true, dedup = false, dry_run = false;
  auto* c_train = app.add_subcommand(
      "train", "Train a model. Settings resolve as defaults < --preset < --config < individual flags");
  c_train->add_option("--bundle", bundle_path, "Corpus bundle")->required();
  c_train->add_option("--out", out_dir, "Output directory for checkpoints, log and manifest");
  c_train->add_option("--preset", preset, "Hyperparameter preset, e.g. games-text_id or synthetic-id");
  c_train->add_option("--config", config_file, "JSON config; fields override the preset");
  auto* o_steps = c_train->add_option("--steps", steps, "Total optimisation steps");
  auto* o_batch = c_train->add_option("--batch", batch, "Sequences per step, before packing");
  auto* o_lr = c_train->add_option("--lr", lr, "Learning rate");
  auto* o_wd = c_train->add_option("--weight-decay", wd, "Decoupled weight decay");
  auto* o_alpha = c_train->add_option("--alpha", alpha, "MLM weight in the total loss");
  auto* o_tseed = c_train->add_option("--seed", train_seed, "Training seed");
  auto* o_fusion = c_train->add_option("--fusion", fusion, "id_only, text_id or text_id_critique")
                       ->check(CLI::IsMember({"id_only", "text_id", "text_id_critique"}));
  auto* o_mask = c_train->add_option("--masking", masking, "bidirectional or last_only")
                     ->check(CLI::IsMember({"bidirectional", "last_only"}));
  auto* o_reducer = c_train->add_option("--reducer", reducer, "perceiver or mean_pool")
                        ->check(CLI::IsMember({"perceiver", "mean_pool"}));
  auto* o_emb = c_train->add_option("--embeddings", embeddings, "Precomputed item text embeddings");
  auto* o_ckpt = c_train->add_option("--checkpoint-every", ckpt_every, "Steps between checkpoints");
  auto* o_contrastive = c_train->add_flag("--contrastive,!--no-contrastive", contrastive, "Toggle the contrastive loss");
  auto* o_dedup = c_train->add_flag("--dedup", dedup, "Collapse consecutive repeats in training sequences");
  c_train->add_flag("--dry-run", dry_run, "Print the resolved config and exit");

  // eval and mutate-eval
  EvalArgs ev;
  auto add_eval_common = [&](CLI::App* c) {
    c->add_option("--bundle", ev.bundle, "Corpus bundle")->required();
    c->add_option("--checkpoint", ev.checkpoint, "Model checkpoint")->required();
    c->add_option("--split", ev.split, "valid or test")->check(CLI::IsMember({"valid", "test"}))->capture_default_str();
    c->add_option("--idcg", ev.idcg, "Cat-nDCG ideal: full or within_list")
        ->check(CLI::IsMember({"full", "within_list"}))
        ->capture_default_str();
    c->add_option("--max-queries", ev.max_queries, "Evaluate at most this many queries (0: all)");
    c->add_option("--out", ev.out, "Write the JSON report here");
    c->add_option("--csv", ev.csv, "Write per-query rows here");
    c->add_flag("--queries", ev.queries, "Include per-query records in the JSON report");
  };
  auto* c_eval = app.add_subcommand("eval", "Rank the full catalog for held-out queries");
  add_eval_common(c_eval);
  c_eval->add_option("--critique", ev.critique, "none, broad or precise")
      ->check(CLI::IsMember({"none", "broad", "precise"}))
      ->capture_default_str();
  auto* c_mut = app.add_subcommand("mutate-eval", "Evaluate with critiques mutated from a given category level");
  add_eval_common(c_mut);
  c_mut->add_option("--level", ev.level, "First mutated level")->check(CLI::IsMember({2, 3, 4}))->required();
  c_mut->add_option("--min-items", ev.min_items, "Smallest category a mutation may land in")->capture_default_str();
  c_mut->add_option("--seed", ev.seed, "Mutation seed")->capture_default_str();

  // grad-check
  std::uint64_t gc_seed = 21;
  double gc_eps = 1e-5, gc_tol = 1e-4;
  auto* c_gc = app.add_subcommand("grad-check", "Finite-difference check of every parameter on a toy model");
  c_gc->add_option("--seed", gc_seed, "Initialisation seed")->capture_default_str();
  c_gc->add_option("--eps", gc_eps, "Central-difference step")->capture_default_str();
  c_gc->add_option("--tolerance", gc_tol, "Largest accepted relative error")->capture_default_str();

  // serve
  std::string sv_bundle, sv_ckpt, sv_host = "127.0.0.1";
  int sv_port = 8080;
  auto* c_serve = app.add_subcommand("serve", "HTTP API over a catalog and optional checkpoint");
  c_serve->add_option("--bundle", sv_bundle, "Corpus bundle providing the catalog")->required();
  c_serve->add_option("--checkpoint", sv_ckpt, "Model checkpoint; without it only catalog routes work");
  c_serve->add_option("--host", sv_host, "Bind address")->capture_default_str();
  c_serve->add_option("--port", sv_port, "Port")->check(CLI::Range(1, 65535))->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  Context ctx{workdir, {}, out, err};
  // --workdir only changes where relative paths land, so it stays out of the
  // manifest.
  for (int i = 1; i < argc; ++i) {
    const std::string_view a = argv[i];
    if (a == "--workdir") {
      ++i;
    } else if (!a.starts_with("--workdir=")) {
      ctx.args.emplace_back(a);
    }
  }

  try {
    if (c_pre->parsed()) return do_preprocess(ctx, pre);

    if (c_synth->parsed()) {
      SynthSpec s;
      if (!synth_spec_file.empty()) s = SynthSpec::from_json(read_json(ctx.resolve(synth_spec_file)));
      if (!synth_structure.empty()) s.structure = synth_structure_from_string(synth_structure);
      if (o_items->count()) s.n_items = spec.n_items;
      if (o_users->count()) s.n_users = spec.n_users;
      if (o_minlen->count()) s.min_length = spec.min_length;
      if (o_maxlen->count()) s.max_length = spec.max_length;
      if (o_sseed->count()) s.seed = spec.seed;
      if (o_branch->count()) s.branching = spec.branching;
      if (o_jump->count()) s.jump_probability = spec.jump_probability;
      if (o_jlev->count()) s.jump_levels = spec.jump_levels;
      if (!synth_split.empty()) s.split = split_mode_from(synth_split);
      s.validate();
      return do_synth(ctx, s, synth_spec_file, synth_out);
    }

    if (c_train->parsed()) {
      TrainConfig cfg = preset.empty() ? TrainConfig{} : load_preset(preset);
      if (!config_file.empty()) cfg = TrainConfig::from_json(read_json(ctx.resolve(config_file)), cfg);
      if (o_steps->count()) cfg.total_steps = steps;
      if (o_batch->count()) cfg.batch = batch;
      if (o_lr->count()) cfg.lr = lr;
      if (o_wd->count()) cfg.weight_decay = wd;
      if (o_alpha->count()) cfg.loss.alpha = alpha;
      if (o_tseed->count()) cfg.seed = train_seed;
      if (o_fusion->count()) cfg.fusion = fusion_mode_from_string(fusion);
      if (o_mask->count()) cfg.masking = masking == "last_only" ? MaskMode::LastOnly : MaskMode::Bidirectional;
      if (o_reducer->count()) cfg.reducer = text_reducer_from_string(reducer);
      if (o_emb->count()) cfg.text.embeddings = embeddings;
      if (o_ckpt->count()) cfg.checkpoint_every = ckpt_every;
      if (o_contrastive->count()) cfg.loss.contrastive_enabled = contrastive;
      if (o_dedup->count()) cfg.dedup = dedup;
      cfg.validate();
      if (!dry_run && out_dir.empty()) {
        err << "train: --out is required unless --dry-run is given\n" << c_train->help();
        return kExitUsage;
      }
      return do_train(ctx, cfg, bundle_path, out_dir, dry_run);
    }

    if (c_eval->parsed()) return do_eval(ctx, ev, false);
    if (c_mut->parsed()) return do_eval(ctx, ev, true);
    if (c_gc->parsed()) return do_grad_check(ctx, gc_seed, gc_eps, gc_tol);
    if (c_serve->parsed()) return do_serve(ctx, sv_bundle, sv_ckpt, sv_host, sv_port);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace flare::cli
