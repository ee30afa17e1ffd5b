// saelab command line: data generation, training, comparison, analysis,
// spark checks, activation ingestion and named experiments.
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "saelab/config.hpp"
#include "saelab/container.hpp"
#include "saelab/datagen.hpp"
#include "saelab/experiment.hpp"
#include "saelab/metrics.hpp"
#include "saelab/parallel.hpp"
#include "saelab/spark.hpp"
#include "saelab/trainer.hpp"

namespace {

using namespace saelab;
namespace fs = std::filesystem;

enum Exit : int { kOk = 0, kFailed = 1, kUsage = 2, kParse = 3, kRuntime = 4 };

struct DataFlags {
  std::string preset;
  std::optional<std::size_t> m, d_gt, k, n, clusters, transition_rank;
  std::optional<std::string> law;
  std::optional<double> alpha, s1, q, s2;
  std::uint64_t seed = 0;
  bool signed_values = false;

  void add(CLI::App* app) {
    app->add_option("--preset", preset, "Start from a named experiment's data parameters");
    app->add_option("--m", m, "Activation dimension");
    app->add_option("--d-gt", d_gt, "Ground-truth dictionary width");
    app->add_option("--k", k, "Nonzeros per sample");
    app->add_option("--n", n, "Number of samples");
    app->add_option("--clusters", clusters, "Number of equal-size feature clusters");
    app->add_option("--law", law, "uniform | zipf | two_phase");
    app->add_option("--alpha", alpha, "Zipf exponent");
    app->add_option("--s1", s1, "Two-phase head exponent");
    app->add_option("--q", q, "Two-phase head offset");
    app->add_option("--s2", s2, "Two-phase tail exponent");
    app->add_option("--transition-rank", transition_rank, "Two-phase transition rank");
    app->add_option("--seed", seed, "Data seed");
    app->add_flag("--signed", signed_values, "Signed Gaussian coefficients");
  }

  GroundTruthSpec resolve() const {
    ExperimentConfig c = preset.empty() ? ExperimentConfig{} : saelab::preset(preset);
    if (m) c.data.m = *m;
    if (d_gt) c.data.d_gt = *d_gt;
    if (k) c.data.k = *k;
    if (n) c.data.n = *n;
    if (clusters) c.data.clusters = *clusters;
    if (law) c.law.kind = *law;
    if (alpha) c.law.alpha = *alpha;
    if (s1) c.law.two_phase.s1 = *s1;
    if (q) c.law.two_phase.q = *q;
    if (s2) c.law.two_phase.s2 = *s2;
    if (transition_rank) c.law.two_phase.transition_rank = *transition_rank;
    c.data.seed = seed;
    c.data.signed_values = signed_values;
    auto spec = c.ground_truth_spec();
    spec.validate();
    return spec;
  }
};

void print_report(const ArchReport& rep) {
  std::printf("arch %s\n", to_string(rep.arch).c_str());
  if (!rep.consistency.pairwise.empty()) std::printf("mean_pw_mcc %.6f\n", rep.consistency.mean_pw_mcc);
  if (rep.mean_gt_mcc) std::printf("mean_gt_mcc %.6f\n", *rep.mean_gt_mcc);
  if (rep.consistency.intersection_ratio) std::printf("intersection_ratio %.6f\n", *rep.consistency.intersection_ratio);
  if (rep.freq_similarity_spearman) std::printf("freq_similarity_spearman %.6f\n", *rep.freq_similarity_spearman);
  if (rep.consistency.capacity && rep.consistency.capacity->beta)
    std::printf("beta %.6f\n", *rep.consistency.capacity->beta);
  if (rep.cluster_mcc_spearman) std::printf("cluster_mcc_spearman %.6f\n", *rep.cluster_mcc_spearman);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"saelab: sparse autoencoder consistency experiments"};
  app.set_version_flag("--version", std::string(saelab::version()));
  app.require_subcommand(1);

  // generate
  auto* gen = app.add_subcommand("generate", "Sample a ground-truth dictionary and a synthetic dataset");
  DataFlags gen_flags;
  gen_flags.add(gen);
  std::string gen_data, gen_gt, gen_raw;
  gen->add_option("--data", gen_data, "Output SAEC dataset");
  gen->add_option("--gt", gen_gt, "Output SAEC ground-truth dictionary");
  gen->add_option("--raw", gen_raw, "Also export samples as raw little-endian f32");

  // train
  auto* tr = app.add_subcommand("train", "Train one SAE");
  std::string tr_data, tr_raw, tr_gt, tr_arch = "topk", tr_out = "model.saec", tr_dict, tr_trace;
  std::size_t tr_raw_m = 0, tr_d_sae = 16;
  std::optional<std::size_t> tr_k, tr_steps, tr_batch, tr_warmup, tr_eval, tr_ckpt;
  std::optional<double> tr_lr, tr_coeff, tr_target_l0;
  std::uint64_t tr_seed = 0;
  tr->add_option("--data", tr_data, "SAEC dataset");
  tr->add_option("--raw", tr_raw, "Raw f32 activations instead of --data");
  tr->add_option("--raw-m", tr_raw_m, "Activation dimension of --raw");
  tr->add_option("--gt", tr_gt, "Ground-truth dictionary for GT-MCC tracking");
  tr->add_option("--arch", tr_arch, "standard | topk | batchtopk | gated | panneal | jumprelu");
  tr->add_option("--d-sae", tr_d_sae, "Dictionary width");
  tr->add_option("--k", tr_k, "Active features for TopK / BatchTopK");
  tr->add_option("--sparsity-coeff", tr_coeff, "Sparsity penalty coefficient");
  tr->add_option("--target-l0", tr_target_l0, "JumpReLU target L0");
  tr->add_option("--steps", tr_steps);
  tr->add_option("--batch-size", tr_batch);
  tr->add_option("--lr", tr_lr);
  tr->add_option("--warmup", tr_warmup);
  tr->add_option("--eval-interval", tr_eval);
  tr->add_option("--checkpoint-interval", tr_ckpt);
  tr->add_option("--seed", tr_seed);
  tr->add_option("--out", tr_out, "Output SAEC model");
  tr->add_option("--dict", tr_dict, "Also write the decoder as a SAEC dictionary");
  tr->add_option("--trace", tr_trace, "Trace CSV");

  // compare
  auto* cmp = app.add_subcommand("compare", "MCC between two dictionaries (or models)");
  std::string cmp_a, cmp_b, cmp_pairs;
  cmp->add_option("a", cmp_a)->required();
  cmp->add_option("b", cmp_b)->required();
  cmp->add_option("--pairs", cmp_pairs, "Per-pair CSV output");

  // analyze
  auto* an = app.add_subcommand("analyze", "Consistency analyses over trained models");
  std::vector<std::string> an_models;
  std::string an_data, an_gt, an_out, an_plots, an_law = "uniform", an_bin_mode = "log";
  std::size_t an_clusters = 0, an_bins = 10;
  double an_alpha = 1.0;
  an->add_option("models", an_models, "SAEC model files")->required();
  an->add_option("--data", an_data, "SAEC dataset for activation frequencies");
  an->add_option("--gt", an_gt, "Ground-truth dictionary");
  an->add_option("--clusters", an_clusters, "Cluster count of the ground truth (enables capacity analysis)");
  an->add_option("--law", an_law, "uniform | zipf (cluster law for capacity analysis)");
  an->add_option("--alpha", an_alpha, "Zipf exponent");
  an->add_option("--bins", an_bins);
  an->add_option("--bin-mode", an_bin_mode, "log | quantile");
  an->add_option("--out", an_out, "Report JSON path");
  an->add_option("--plots", an_plots, "Directory for plot CSVs");

  // spark
  auto* sp = app.add_subcommand("spark", "Spark-condition and round-trip checks on a dictionary");
  std::string sp_dict;
  std::size_t sp_k = 1;
  SparkOptions sp_opt;
  std::uint64_t sp_sampled = 0, sp_round_trip = 0;
  bool sp_exhaustive = false;
  sp->add_option("dict", sp_dict, "SAEC dictionary or model")->required();
  sp->add_option("--k", sp_k, "Sparsity level")->required();
  sp->add_option("--rank-tol", sp_opt.rank_tol, "Relative rank tolerance");
  sp->add_option("--max-subsets", sp_opt.max_subsets, "Enumeration cap");
  sp->add_option("--sampled", sp_sampled, "Test this many random subsets instead (probabilistic)");
  sp->add_option("--seed", sp_opt.seed);
  sp->add_option("--round-trip", sp_round_trip, "Random round-trip trials");
  sp->add_flag("--exhaustive", sp_exhaustive, "Round trip over every support with all-ones values");

  // ingest
  auto* ing = app.add_subcommand("ingest", "Wrap raw f32 activations as a SAEC dataset");
  std::string ing_raw, ing_out;
  std::size_t ing_m = 0;
  ing->add_option("raw", ing_raw)->required();
  ing->add_option("--m", ing_m, "Activation dimension")->required();
  ing->add_option("--out", ing_out, "Output SAEC dataset")->required();

  // experiment
  auto* ex = app.add_subcommand("experiment", "Run a named or configured experiment");
  std::string ex_name, ex_config, ex_out;
  std::vector<std::string> ex_set;
  std::optional<std::size_t> ex_workers;
  bool ex_force = false, ex_print = false, ex_list = false;
  ex->add_option("preset", ex_name, "matched | redundant | compressive | uniform_clusters | zipf_sweep | "
                                     "two_phase_desk | two_phase_full | k_sweep | custom");
  ex->add_option("--config", ex_config, "INI config file");
  ex->add_option("--set", ex_set, "Override section.key=value (repeatable)");
  ex->add_option("--out", ex_out, "Output root (experiment.output_dir)");
  ex->add_option("--workers", ex_workers, "Worker threads (default: SAELAB_WORKERS or hardware)");
  ex->add_flag("--force", ex_force, "Allow overriding parameters a preset fixes");
  ex->add_flag("--print-config", ex_print, "Print the resolved config and exit");
  ex->add_flag("--list-keys", ex_list, "List config keys and exit");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  try {
    if (*gen) {
      if (gen_data.empty() && gen_gt.empty() && gen_raw.empty()) throw ConfigError("generate: nothing to write");
      const auto spec = gen_flags.resolve();
      const Dictionary a = sample_ground_truth(spec);
      const Dataset d = sample_dataset(spec, a, default_workers());
      if (!gen_gt.empty()) write_dictionary(gen_gt, a);
      if (!gen_data.empty()) write_dataset(gen_data, d);
      if (!gen_raw.empty()) write_raw_activations(gen_raw, d.X);
      std::printf("generated %zu samples, m=%zu, d_gt=%zu, k=%zu, law=%s\n", d.n(), d.m(), spec.d_gt, spec.k,
                  describe(spec.law).c_str());
      return kOk;
    }

    if (*tr) {
      Dataset data;
      if (!tr_raw.empty())
        data = ingest_activations(tr_raw, tr_raw_m);
      else if (!tr_data.empty())
        data = read_dataset(tr_data);
      else
        throw ConfigError("train: --data or --raw is required");
      std::optional<Dictionary> gt;
      if (!tr_gt.empty()) gt = load_dictionary_any(tr_gt);
      ArchParams p;
      if (tr_k) p.k = *tr_k;
      if (tr_coeff) p.sparsity_coeff = *tr_coeff;
      if (tr_target_l0) p.target_l0 = *tr_target_l0;
      TrainConfig c;
      if (tr_steps) c.steps = *tr_steps;
      if (tr_batch) c.batch_size = *tr_batch;
      if (tr_lr) c.lr = *tr_lr;
      if (tr_warmup) c.warmup_steps = *tr_warmup;
      if (tr_eval) c.eval_interval = *tr_eval;
      if (tr_ckpt) {
        c.checkpoint_interval = *tr_ckpt;
        c.checkpoint_dir = fs::path(tr_out).parent_path() / "checkpoints";
      }
      const Arch arch = parse_arch(tr_arch);
      auto res = train(init_model(arch, data.m(), tr_d_sae, p, tr_seed), data, c, gt ? &*gt : nullptr, tr_seed);
      write_model(tr_out, res.model);
      if (!tr_dict.empty()) write_dictionary(tr_dict, res.model.W_dec);
      if (!tr_trace.empty()) write_trace_csv(res.trace, tr_trace);
      const auto& last = res.trace.records.back();
      std::printf("trained %s d_sae=%zu steps=%zu recon=%.6g l0=%.3f", to_string(arch).c_str(), tr_d_sae, c.steps,
                  last.recon_loss, last.mean_l0);
      if (gt) std::printf(" gt_mcc=%.6f", res.trace.final_gt_mcc(c.eval_interval));
      std::printf("\n");
      return kOk;
    }

    if (*cmp) {
      const auto res = compare_dictionaries(cmp_a, cmp_b, cmp_pairs);
      std::printf("MCC %.9f (%zu matched pairs)\n", res.mean, res.pairs.size());
      return kOk;
    }

    if (*an) {
      AnalysisInputs in;
      for (const auto& path : an_models) in.models.push_back(read_model(path));
      if (in.models.empty()) throw ConfigError("analyze: no models");
      in.arch = in.models.front().arch;
      std::optional<Dataset> data;
      std::optional<Dictionary> gt;
      if (!an_data.empty()) {
        data = read_dataset(an_data);
        in.data = &*data;
      }
      if (!an_gt.empty()) {
        gt = load_dictionary_any(an_gt);
        in.ground_truth = &*gt;
      }
      AnalysisToggles tg;
      tg.gt_mcc = gt.has_value();
      tg.intersection_ratio = gt.has_value() && in.models.size() >= 2;
      tg.binned_similarity = data.has_value();
      tg.bins = an_bins;
      tg.bin_mode = an_bin_mode == "quantile" ? BinMode::Quantile : BinMode::Log;
      if (an_bin_mode != "log" && an_bin_mode != "quantile") throw ConfigError("analyze: --bin-mode must be log or quantile");
      if (gt && an_clusters > 0) {
        LawSettings law;
        law.kind = an_law;
        law.alpha = an_alpha;
        if (gt->cols() % static_cast<Eigen::Index>(an_clusters) != 0)
          throw ConfigError("analyze: ground-truth width is not divisible by --clusters");
        in.cluster_probabilities = cluster_probabilities(law.resolve(), an_clusters);
        in.cluster_size = static_cast<std::size_t>(gt->cols()) / an_clusters;
        tg.capacity_allocation = true;
      }
      in.workers = default_workers();
      const auto rep = analyze_runs(in, tg);
      print_report(rep);
      if (!an_out.empty()) {
        std::ofstream out(an_out);
        out << to_json(rep) << "\n";
      }
      if (!an_plots.empty()) {
        PointReport pr;
        pr.archs.push_back(rep);
        for (PlotKind kind : {PlotKind::FreqSimilarity, PlotKind::Contribution, PlotKind::Capacity}) {
          try {
            std::printf("wrote %s\n", emit_plot_data(pr, kind, an_plots).string().c_str());
          } catch (const std::runtime_error& e) {
            std::printf("skipped: %s\n", e.what());
          }
        }
      }
      return kOk;
    }

    if (*sp) {
      const Dictionary a = load_dictionary_any(sp_dict);
      sp_opt.workers = default_workers();
      if (sp_sampled > 0) {
        sp_opt.sampled = true;
        sp_opt.samples = sp_sampled;
      }
      nlohmann::json out;
      out["spark"] = nlohmann::json::parse(to_json(check_spark(a, sp_k, sp_opt)));
      RoundTripOptions ro;
      ro.seed = sp_opt.seed;
      if (sp_round_trip > 0) out["round_trip"] = nlohmann::json::parse(to_json(check_round_trip(a, sp_k, sp_round_trip, ro)));
      if (sp_exhaustive) out["round_trip_exhaustive"] = nlohmann::json::parse(to_json(check_round_trip_exhaustive(a, sp_k, ro)));
      out["witness_set_size"] = witness_set_size(static_cast<std::size_t>(a.cols()), sp_k).str();
      std::printf("%s\n", out.dump(2).c_str());
      return kOk;
    }

    if (*ing) {
      const Dataset d = ingest_activations(ing_raw, ing_m);
      write_dataset(ing_out, d);
      std::printf("ingested %zu vectors of dimension %zu (no ground truth)\n", d.n(), d.m());
      return kOk;
    }

    if (*ex) {
      if (ex_list) {
        for (const auto& k : config_keys()) std::printf("%s\n", k.c_str());
        return kOk;
      }
      ConfigEntries file_entries;
      if (!ex_config.empty()) file_entries = read_ini(ex_config);
      ConfigEntries overrides;
      for (const auto& s : ex_set) overrides.push_back(parse_override(s));
      if (!ex_out.empty()) overrides.emplace_back("experiment.output_dir", ex_out);
      if (ex_workers) overrides.emplace_back("experiment.workers", std::to_string(*ex_workers));
      std::optional<std::string> name;
      if (!ex_name.empty()) name = ex_name;
      const auto cfg = resolve_config(name, file_entries, overrides, ex_force);
      if (ex_print) {
        std::printf("%s", to_ini(cfg).c_str());
        return kOk;
      }
      const auto result = run_experiment(cfg, &std::cerr);
      std::printf("%s\n", (result.dir / "manifest.json").string().c_str());
      for (const auto& f : result.manifest.failures) std::fprintf(stderr, "failed run: %s\n", f.c_str());
      return result.ok() ? kOk : kFailed;
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const ParseError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kParse;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kRuntime;
  }
  return kOk;
}
