#include "saelab/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <ostream>

#include <json.hpp>
#include <openssl/evp.h>

#include "saelab/container.hpp"
#include "saelab/parallel.hpp"
#include "saelab/spark.hpp"

namespace saelab {

namespace fs = std::filesystem;
using nlohmann::json;

const char* version() { return SAELAB_VERSION; }

bool ExperimentResult::ok() const {
  if (!manifest.failures.empty()) return false;
  return std::all_of(manifest.checks.begin(), manifest.checks.end(), [](const CheckResult& c) { return c.passed; });
}

const ArchReport* PointReport::find(Arch arch) const {
  for (const auto& a : archs)
    if (a.arch == arch) return &a;
  return nullptr;
}

std::string to_string(PlotKind kind) {
  switch (kind) {
    case PlotKind::MccCurves: return "mcc_curves";
    case PlotKind::FreqSimilarity: return "freq_similarity";
    case PlotKind::Contribution: return "contribution";
    case PlotKind::Capacity: return "capacity";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// Files and hashes

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read '" + path.string() + "'");
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
    EVP_MD_CTX_free(ctx);
    throw std::runtime_error("sha256: digest init failed");
  }
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

std::vector<FileEntry> inventory(const fs::path& dir) {
  std::vector<FileEntry> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), dir).generic_string();
    if (rel == "manifest.json") continue;
    out.push_back({rel, sha256_file(e.path()), e.file_size()});
  }
  std::sort(out.begin(), out.end(), [](const FileEntry& a, const FileEntry& b) { return a.path < b.path; });
  return out;
}

bool verify_manifest(const fs::path& dir, std::string* problem) {
  const auto fail = [&](std::string why) {
    if (problem) *problem = std::move(why);
    return false;
  };
  std::ifstream in(dir / "manifest.json");
  if (!in) return fail("manifest.json missing");
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    return fail(std::string("manifest.json unreadable: ") + e.what());
  }
  std::vector<FileEntry> listed;
  for (const auto& f : j.at("files")) listed.push_back({f.at("path"), f.at("sha256"), f.at("bytes")});
  const auto now = inventory(dir);
  if (now.size() != listed.size())
    return fail("file count differs: manifest " + std::to_string(listed.size()) + ", directory " +
                std::to_string(now.size()));
  for (std::size_t i = 0; i < now.size(); ++i) {
    if (now[i].path != listed[i].path) return fail("unlisted or missing file near '" + now[i].path + "'");
    if (now[i].sha256 != listed[i].sha256) return fail("hash mismatch for '" + now[i].path + "'");
  }
  return true;
}

Dictionary load_dictionary_any(const fs::path& path) {
  const auto h = read_header(path);
  switch (h.role) {
    case Role::Dictionary: return read_dictionary(path);
    case Role::Model: return read_model(path).W_dec;
    default: throw ParseError("expected a dictionary or model container", 8);
  }
}

MatchResult compare_dictionaries(const fs::path& a, const fs::path& b, const fs::path& pairs_csv) {
  const Dictionary da = load_dictionary_any(a);
  const Dictionary db = load_dictionary_any(b);
  if (da.rows() != db.rows())
    throw std::invalid_argument("dictionaries have different activation dimensions (" + std::to_string(da.rows()) +
                                " vs " + std::to_string(db.rows()) + ")");
  MatchResult res = mcc(da, db);
  if (!pairs_csv.empty()) {
    std::ofstream out(pairs_csv, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + pairs_csv.string() + "' for writing");
    out << "i,j,similarity\n";
    char line[96];
    for (const auto& p : res.pairs) {
      std::snprintf(line, sizeof line, "%zu,%zu,%.12g\n", p.i, p.j, p.similarity);
      out << line;
    }
  }
  return res;
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out << text;
}

std::string num(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

json opt_json(const std::optional<double>& v) {
  return v && std::isfinite(*v) ? json(*v) : json();
}

json finite(double v) { return std::isfinite(v) ? json(v) : json(); }

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::nan("");
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::vector<std::size_t> curve_indices(std::size_t records, std::size_t points) {
  std::vector<std::size_t> idx;
  if (records == 0) return idx;
  if (points == 0 || points >= records) {
    idx.resize(records);
    std::iota(idx.begin(), idx.end(), 0);
    return idx;
  }
  for (std::size_t p = 0; p < points; ++p) {
    const std::size_t i = points == 1 ? records - 1 : (p * (records - 1)) / (points - 1);
    if (idx.empty() || idx.back() != i) idx.push_back(i);
  }
  return idx;
}

}  // namespace

// ---------------------------------------------------------------------------
// Analyses

ArchReport analyze_runs(const AnalysisInputs& in, const AnalysisToggles& tg) {
  ArchReport rep;
  rep.arch = in.arch;
  const std::size_t runs = in.models.size();
  std::vector<Dictionary> dicts;
  for (const auto& m : in.models) dicts.push_back(m.W_dec);
  const bool have_gt = in.ground_truth != nullptr;

  // Pairwise matches, kept for binning.
  std::vector<std::pair<std::size_t, std::size_t>> pair_ids;
  std::vector<MatchResult> pair_matches;
  if (tg.pw_mcc && runs >= 2) {
    for (std::size_t a = 0; a < runs; ++a)
      for (std::size_t b = a + 1; b < runs; ++b) pair_ids.emplace_back(a, b);
    pair_matches.resize(pair_ids.size());
    parallel_for(pair_ids.size(), in.workers, [&](std::size_t lo, std::size_t hi) {
      for (std::size_t p = lo; p < hi; ++p) pair_matches[p] = mcc(dicts[pair_ids[p].first], dicts[pair_ids[p].second]);
    });
    double sum = 0.0;
    for (std::size_t p = 0; p < pair_ids.size(); ++p) {
      rep.consistency.pairwise.push_back({pair_ids[p].first, pair_ids[p].second, pair_matches[p].mean});
      sum += pair_matches[p].mean;
    }
    rep.consistency.mean_pw_mcc = sum / static_cast<double>(pair_ids.size());
  } else {
    rep.consistency.mean_pw_mcc = std::nan("");
  }

  if (tg.gt_mcc && have_gt) {
    for (std::size_t r = 0; r < runs; ++r) {
      const bool traced = r < in.traces.size() && !in.traces[r].records.empty() && in.traces[r].records.back().gt_mcc;
      rep.consistency.gt_mcc.push_back(traced ? in.traces[r].final_gt_mcc(in.eval_interval)
                                              : gt_mcc(dicts[r], *in.ground_truth).mean);
    }
    rep.mean_gt_mcc = mean_of(rep.consistency.gt_mcc);
  }

  // Curves over the trace records.
  const bool traced = in.traces.size() == runs && runs > 0;
  if (traced) {
    const std::size_t records = in.traces[0].records.size();
    bool aligned = true;
    for (const auto& t : in.traces) aligned = aligned && t.records.size() == records;
    const bool snaps = aligned && std::all_of(in.traces.begin(), in.traces.end(),
                                              [&](const TrainTrace& t) { return t.snapshots.size() == records; });
    if (aligned) {
      const auto all = curve_indices(records, 0);
      const auto sparse = curve_indices(records, tg.curve_points);
      for (std::size_t i : all) {
        CurvePoint cp;
        cp.step = in.traces[0].records[i].step;
        std::vector<double> g;
        for (const auto& t : in.traces)
          if (t.records[i].gt_mcc) g.push_back(*t.records[i].gt_mcc);
        if (g.size() == runs) cp.gt_mcc = mean_of(g);
        const bool heavy = std::binary_search(sparse.begin(), sparse.end(), i);
        if (snaps && heavy) {
          std::vector<Dictionary> at;
          for (const auto& t : in.traces) at.push_back(t.snapshots[i]);
          if (tg.pw_mcc && runs >= 2) {
            std::vector<double> vals(pair_ids.size());
            parallel_for(pair_ids.size(), in.workers, [&](std::size_t lo, std::size_t hi) {
              for (std::size_t p = lo; p < hi; ++p) vals[p] = mcc(at[pair_ids[p].first], at[pair_ids[p].second]).mean;
            });
            cp.pw_mcc = mean_of(vals);
          }
          if (tg.intersection_ratio && have_gt && runs >= 2)
            cp.intersection_ratio = mean_intersection_ratio(at, *in.ground_truth);
        }
        rep.curves.push_back(cp);
      }
      if (tg.intersection_ratio && have_gt && in.total_steps > 0) {
        std::vector<double> first, last;
        for (const auto& cp : rep.curves) {
          if (!cp.intersection_ratio) continue;
          if (4 * cp.step <= in.total_steps) first.push_back(*cp.intersection_ratio);
          if (4 * cp.step >= 3 * in.total_steps) last.push_back(*cp.intersection_ratio);
        }
        if (!first.empty()) rep.intersection_first_quartile = mean_of(first);
        if (!last.empty()) rep.intersection_last_quartile = mean_of(last);
      }
    }
  }
  if (tg.intersection_ratio && have_gt && runs >= 2)
    rep.consistency.intersection_ratio = mean_intersection_ratio(dicts, *in.ground_truth);

  if (tg.binned_similarity && in.data && !pair_matches.empty()) {
    std::vector<FrequencyProfile> prof(runs);
    for (std::size_t r = 0; r < runs; ++r) prof[r] = activation_frequencies(in.models[r], in.data->X);
    std::vector<double> rhos;
    for (std::size_t p = 0; p < pair_ids.size(); ++p) {
      auto binned = binned_similarity(pair_matches[p], prof[pair_ids[p].first], prof[pair_ids[p].second], tg.bins,
                                      tg.bin_mode);
      std::vector<double> mf, sim;
      for (const auto& pr : binned.pairs) {
        mf.push_back(pr.min_freq);
        sim.push_back(pr.similarity);
      }
      const double rho = spearman(mf, sim);
      if (std::isfinite(rho)) rhos.push_back(rho);
      if (p == 0) rep.consistency.binned = std::move(binned);
    }
    if (!rhos.empty()) rep.freq_similarity_spearman = mean_of(rhos);
  }

  if (tg.capacity_allocation && have_gt && in.cluster_size > 0 && !in.cluster_probabilities.empty()) {
    const std::size_t clusters = in.cluster_probabilities.size();
    rep.consistency.cluster_probabilities = in.cluster_probabilities;
    rep.mean_allocation.assign(clusters, 0.0);
    std::vector<double> cluster_mcc(clusters, 0.0);
    for (std::size_t r = 0; r < runs; ++r) {
      const auto match = gt_mcc(dicts[r], *in.ground_truth);
      const auto cap = capacity_allocation(match, in.cluster_size, in.cluster_probabilities);
      if (cap.beta) rep.betas.push_back(*cap.beta);
      for (std::size_t c = 0; c < clusters; ++c) rep.mean_allocation[c] += cap.allocation[c] / static_cast<double>(runs);
      const auto per = per_cluster_gt_mcc(dicts[r], *in.ground_truth, in.cluster_size);
      for (std::size_t c = 0; c < clusters; ++c) cluster_mcc[c] += per[c] / static_cast<double>(runs);
    }
    rep.consistency.capacity = fit_allocation_exponent(in.cluster_probabilities, rep.mean_allocation);
    rep.consistency.capacity->allocation = rep.mean_allocation;
    rep.consistency.cluster_gt_mcc = cluster_mcc;
    const double rho = spearman(cluster_mcc, in.cluster_probabilities);
    if (std::isfinite(rho)) rep.cluster_mcc_spearman = rho;
    std::vector<std::size_t> sizes(clusters, in.cluster_size);
    rep.consistency.redundancy = local_redundancy(rep.mean_allocation, sizes);
  }

  if (tg.spark_check) {
    for (std::size_t r = 0; r < runs; ++r) {
      const std::size_t k = std::max<std::size_t>(1, in.models[r].params.k);
      try {
        rep.spark.push_back(to_json(check_spark(dicts[r], k), -1));
      } catch (const EnumerationRefused& e) {
        rep.spark.push_back(json{{"k", k}, {"refused", e.what()}, {"required_subsets", e.required}}.dump());
      }
    }
  }
  return rep;
}

std::string to_json(const ArchReport& r, int indent) {
  json j;
  j["arch"] = to_string(r.arch);
  json runs = json::array();
  for (const auto& s : r.runs)
    runs.push_back({{"seed", s.seed},
                    {"ok", s.ok},
                    {"error", s.error},
                    {"final_gt_mcc", opt_json(s.final_gt_mcc)},
                    {"final_recon_loss", finite(s.final_recon_loss)},
                    {"final_mean_l0", finite(s.final_mean_l0)}});
  j["runs"] = runs;
  json pw = json::array();
  for (const auto& p : r.consistency.pairwise) pw.push_back({{"run_a", p.run_a}, {"run_b", p.run_b}, {"mcc", p.mcc}});
  j["pairwise"] = pw;
  j["mean_pw_mcc"] = finite(r.consistency.mean_pw_mcc);
  j["gt_mcc"] = r.consistency.gt_mcc;
  j["mean_gt_mcc"] = opt_json(r.mean_gt_mcc);
  j["intersection_ratio"] = opt_json(r.consistency.intersection_ratio);
  j["intersection_first_quartile"] = opt_json(r.intersection_first_quartile);
  j["intersection_last_quartile"] = opt_json(r.intersection_last_quartile);
  j["freq_similarity_spearman"] = opt_json(r.freq_similarity_spearman);
  j["cluster_mcc_spearman"] = opt_json(r.cluster_mcc_spearman);
  if (r.consistency.binned) {
    json bins = json::array();
    for (const auto& b : r.consistency.binned->bins)
      bins.push_back({{"lo", b.lo},
                      {"hi", b.hi},
                      {"count", b.count},
                      {"mean_similarity", finite(b.mean_similarity)},
                      {"std_similarity", finite(b.std_similarity)},
                      {"contribution", b.contribution},
                      {"cumulative", b.cumulative}});
    j["bins"] = {{"mode", to_string(r.consistency.binned->mode)}, {"bins", bins}};
  }
  if (r.consistency.capacity) {
    const auto& c = *r.consistency.capacity;
    j["capacity"] = {{"allocation", c.allocation},
                     {"beta", opt_json(c.beta)},
                     {"log_intercept", opt_json(c.log_intercept)},
                     {"fit_status", c.fit_status},
                     {"per_run_beta", r.betas},
                     {"cluster_probabilities", r.consistency.cluster_probabilities},
                     {"cluster_gt_mcc", r.consistency.cluster_gt_mcc}};
    json red = json::array();
    for (const auto& l : r.consistency.redundancy) red.push_back({{"rho", l.rho}, {"regime", to_string(l.regime)}});
    j["capacity"]["local_redundancy"] = red;
  }
  if (!r.spark.empty()) {
    json s = json::array();
    for (const auto& txt : r.spark) s.push_back(json::parse(txt));
    j["spark"] = s;
  }
  json curves = json::array();
  for (const auto& c : r.curves)
    curves.push_back({{"step", c.step},
                      {"gt_mcc", opt_json(c.gt_mcc)},
                      {"pw_mcc", opt_json(c.pw_mcc)},
                      {"intersection_ratio", opt_json(c.intersection_ratio)}});
  j["curves"] = curves;
  return j.dump(indent);
}

std::string to_json(const RunManifest& m, int indent) {
  json files = json::array();
  for (const auto& f : m.files) files.push_back({{"path", f.path}, {"sha256", f.sha256}, {"bytes", f.bytes}});
  json timings = json::array();
  for (const auto& t : m.timings) timings.push_back({{"label", t.label}, {"seconds", t.seconds}});
  json checks = json::array();
  for (const auto& c : m.checks) checks.push_back({{"name", c.name}, {"passed", c.passed}, {"detail", c.detail}});
  json j{{"experiment", m.experiment}, {"version", m.version}, {"config", m.config_ini}, {"seeds", m.seeds},
         {"files", files},           {"timings", timings},    {"failures", m.failures}, {"checks", checks}};
  return j.dump(indent);
}

// ---------------------------------------------------------------------------
// Plot data

fs::path emit_plot_data(const PointReport& report, PlotKind kind, const fs::path& dir) {
  fs::create_directories(dir);
  const fs::path path = dir / (to_string(kind) + ".csv");
  std::string out;
  const auto missing = [&](const std::string& what) {
    return std::runtime_error("plot data '" + to_string(kind) + "': missing series " + what);
  };
  switch (kind) {
    case PlotKind::MccCurves: {
      out = "arch,step,gt_mcc,pw_mcc\n";
      bool any = false;
      for (const auto& a : report.archs)
        for (const auto& c : a.curves) {
          if (!c.gt_mcc && !c.pw_mcc) continue;
          any = true;
          out += to_string(a.arch) + "," + std::to_string(c.step) + "," + (c.gt_mcc ? num(*c.gt_mcc) : "") + "," +
                 (c.pw_mcc ? num(*c.pw_mcc) : "") + "\n";
        }
      if (!any) throw missing("gt_mcc/pw_mcc curves");
      break;
    }
    case PlotKind::FreqSimilarity: {
      out = "arch,min_freq,similarity\n";
      bool any = false;
      for (const auto& a : report.archs) {
        if (!a.consistency.binned) continue;
        any = true;
        for (const auto& p : a.consistency.binned->pairs)
          out += to_string(a.arch) + "," + num(p.min_freq) + "," + num(p.similarity) + "\n";
      }
      if (!any) throw missing("binned pair similarities");
      break;
    }
    case PlotKind::Contribution: {
      out = "arch,bin,lo,hi,contribution,cumulative,feature_count\n";
      bool any = false;
      for (const auto& a : report.archs) {
        if (!a.consistency.binned) continue;
        any = true;
        const auto& bins = a.consistency.binned->bins;
        for (std::size_t b = 0; b < bins.size(); ++b)
          out += to_string(a.arch) + "," + std::to_string(b) + "," + num(bins[b].lo) + "," + num(bins[b].hi) + "," +
                 num(bins[b].contribution) + "," + num(bins[b].cumulative) + "," + std::to_string(bins[b].count) + "\n";
      }
      if (!any) throw missing("bin contributions");
      break;
    }
    case PlotKind::Capacity: {
      out = "arch,cluster_rank,p_i,D_i,gt_mcc_i\n";
      bool any = false;
      for (const auto& a : report.archs) {
        if (!a.consistency.capacity) continue;
        any = true;
        const auto& p = a.consistency.cluster_probabilities;
        for (std::size_t c = 0; c < p.size(); ++c)
          out += to_string(a.arch) + "," + std::to_string(c + 1) + "," + num(p[c]) + "," + num(a.mean_allocation[c]) +
                 "," + num(a.consistency.cluster_gt_mcc[c]) + "\n";
      }
      if (!any) throw missing("capacity allocation");
      break;
    }
  }
  write_text(path, out);
  return path;
}

// ---------------------------------------------------------------------------
// Preset checks

namespace {

CheckResult check(std::string name, bool ok, std::string detail) { return {std::move(name), ok, std::move(detail)}; }

std::optional<double> gt_of(const PointReport& p, Arch a) {
  const auto* r = p.find(a);
  return r ? r->mean_gt_mcc : std::nullopt;
}
std::optional<double> pw_of(const PointReport& p, Arch a) {
  const auto* r = p.find(a);
  if (!r || !std::isfinite(r->consistency.mean_pw_mcc)) return std::nullopt;
  return r->consistency.mean_pw_mcc;
}
const PointReport* point_with(const std::vector<PointReport>& pts, const std::string& value) {
  for (const auto& p : pts) {
    if (p.sweep_value == value) return &p;
    try {
      if (!p.sweep_value.empty() && std::stod(p.sweep_value) == std::stod(value)) return &p;
    } catch (const std::exception&) {
    }
  }
  return nullptr;
}

}  // namespace

std::vector<CheckResult> preset_checks(const ExperimentConfig& cfg, const std::vector<PointReport>& points) {
  std::vector<CheckResult> out;
  if (cfg.name == "custom" || points.empty()) return out;
  const ExperimentConfig base = preset(cfg.name);
  for (const auto& key : pinned_keys())
    if (key != "experiment.sweep_values" && get_config_value(cfg, key) != get_config_value(base, key)) return out;

  const auto& p0 = points.front();
  if (cfg.name == "matched") {
    const auto tk = gt_of(p0, Arch::TopK), st = gt_of(p0, Arch::Standard), pw = pw_of(p0, Arch::TopK);
    if (tk) out.push_back(check("topk_gt_mcc>=0.90", *tk >= 0.90, num(*tk)));
    if (st) out.push_back(check("standard_gt_mcc<=0.75", *st <= 0.75, num(*st)));
    if (tk && st) out.push_back(check("topk_minus_standard>=0.15", *tk - *st >= 0.15, num(*tk - *st)));
    if (tk && pw) out.push_back(check("topk_|pw-gt|<=0.08", std::abs(*pw - *tk) <= 0.08, num(std::abs(*pw - *tk))));
  } else if (cfg.name == "redundant") {
    const auto gt = gt_of(p0, Arch::TopK), pw = pw_of(p0, Arch::TopK);
    if (gt) out.push_back(check("gt_mcc>=0.90", *gt >= 0.90, num(*gt)));
    if (gt && pw) out.push_back(check("gt_minus_pw>=0.10", *gt - *pw >= 0.10, num(*gt - *pw)));
    if (const auto* r = p0.find(Arch::TopK); r && r->intersection_first_quartile && r->intersection_last_quartile)
      out.push_back(check("intersection_ratio_increases",
                          *r->intersection_last_quartile > *r->intersection_first_quartile,
                          num(*r->intersection_first_quartile) + " -> " + num(*r->intersection_last_quartile)));
  } else if (cfg.name == "compressive") {
    const auto gt = gt_of(p0, Arch::TopK), pw = pw_of(p0, Arch::TopK);
    if (gt) out.push_back(check("gt_mcc_in_[0.65,0.85]", *gt >= 0.65 && *gt <= 0.85, num(*gt)));
    if (pw) out.push_back(check("pw_mcc_in_[0.50,0.70]", *pw >= 0.50 && *pw <= 0.70, num(*pw)));
  } else if (cfg.name == "k_sweep") {
    std::vector<std::pair<double, double>> kv;
    for (const auto& p : points)
      if (auto g = gt_of(p, Arch::TopK)) kv.emplace_back(std::stod(p.sweep_value), *g);
    if (!kv.empty()) {
      const auto best = std::max_element(kv.begin(), kv.end(), [](auto& a, auto& b) { return a.second < b.second; });
      out.push_back(check("argmax_k==8", best->first == 8.0, "argmax k=" + num(best->first)));
    }
    const auto* p2 = point_with(points, "2");
    const auto* p8 = point_with(points, "8");
    const auto* p16 = point_with(points, "16");
    if (p2 && p8 && p16) {
      const auto g2 = gt_of(*p2, Arch::TopK), g8 = gt_of(*p8, Arch::TopK), g16 = gt_of(*p16, Arch::TopK);
      if (g2 && g8 && g16)
        out.push_back(check("gt(2)<gt(16)<gt(8)", *g2 < *g16 && *g16 < *g8,
                            num(*g2) + " < " + num(*g16) + " < " + num(*g8)));
    }
  } else if (cfg.name == "uniform_clusters") {
    const auto* c1 = point_with(points, "1");
    const auto* c100 = point_with(points, "100");
    if (c1 && c100) {
      const auto a = pw_of(*c1, Arch::TopK), b = pw_of(*c100, Arch::TopK);
      if (a && b) out.push_back(check("pw_mcc(C=100)>pw_mcc(C=1)", *b > *a, num(*a) + " -> " + num(*b)));
    }
    for (const auto& p : points)
      if (auto g = gt_of(p, Arch::TopK))
        out.push_back(check("gt_mcc(C=" + p.sweep_value + ")_in_0.74+-0.03", std::abs(*g - 0.74) <= 0.03, num(*g)));
  } else if (cfg.name == "zipf_sweep") {
    if (const auto* p = point_with(points, "1"); p && p->find(Arch::TopK)) {
      const auto* r = p->find(Arch::TopK);
      if (r->consistency.capacity && r->consistency.capacity->beta) {
        const double b = *r->consistency.capacity->beta;
        out.push_back(check("beta(alpha=1)_in_[1.1,1.7]", b >= 1.1 && b <= 1.7, num(b)));
      }
      if (r->cluster_mcc_spearman)
        out.push_back(check("cluster_gt_mcc_vs_probability_spearman>0", *r->cluster_mcc_spearman > 0.0,
                            num(*r->cluster_mcc_spearman)));
    }
  } else if (cfg.name == "two_phase_desk") {
    if (const auto* r = p0.find(Arch::TopK); r && r->freq_similarity_spearman)
      out.push_back(check("min_freq_vs_similarity_spearman>0.3", *r->freq_similarity_spearman > 0.3,
                          num(*r->freq_similarity_spearman)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Orchestration

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string point_label(const std::string& key, const std::string& value) {
  const auto dot = key.rfind('.');
  return (dot == std::string::npos ? key : key.substr(dot + 1)) + "-" + value;
}

std::string data_signature(const ExperimentConfig& c) {
  std::string s;
  for (const auto& key : config_keys())
    if (key.rfind("data.", 0) == 0 || key == "experiment.activations" || key == "experiment.activation_dim")
      s += key + "=" + get_config_value(c, key) + ";";
  return s;
}

struct Job {
  std::size_t arch_index;
  std::uint64_t seed;
};

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg, std::ostream* log) {
  cfg.validate();
  const auto say = [&](const std::string& msg) {
    if (log) *log << msg << std::endl;
  };
  const std::size_t workers = cfg.workers ? cfg.workers : default_workers();
  const auto t_all = Clock::now();

  ExperimentResult result;
  result.dir = cfg.output_dir / cfg.name;
  fs::create_directories(result.dir);
  auto& man = result.manifest;
  man.experiment = cfg.name;
  man.config_ini = to_ini(cfg);
  man.version = version();
  man.seeds = cfg.train.seeds;
  write_text(result.dir / "config.ini", man.config_ini);

  std::vector<std::pair<std::string, ExperimentConfig>> points;
  if (cfg.sweep_key.empty()) {
    points.emplace_back("", cfg);
  } else {
    for (const auto& v : cfg.sweep_values) {
      ExperimentConfig p = cfg;
      set_config_value(p, cfg.sweep_key, v);
      p.sweep_key.clear();
      p.sweep_values.clear();
      p.validate();
      points.emplace_back(v, std::move(p));
    }
  }

  std::string cached_sig;
  Dictionary a_gt;
  Dataset data;
  std::string summary = "point,sweep_value,arch,runs_ok,mean_gt_mcc,mean_pw_mcc\n";

  for (const auto& [value, pc] : points) {
    PointReport pr;
    pr.sweep_value = value;
    pr.label = value.empty() ? "" : point_label(cfg.sweep_key, value);
    pr.dir = value.empty() ? result.dir : result.dir / pr.label;
    fs::create_directories(pr.dir / "analysis");
    const std::string tag = pr.label.empty() ? cfg.name : cfg.name + "/" + pr.label;

    // Data, generated once per distinct spec.
    const std::string sig = data_signature(pc);
    if (sig != cached_sig) {
      const auto t0 = Clock::now();
      if (pc.synthetic()) {
        const auto spec = pc.ground_truth_spec();
        a_gt = sample_ground_truth(spec);
        data = sample_dataset(spec, a_gt, workers);
      } else {
        a_gt.resize(0, 0);
        data = ingest_activations(pc.activations, pc.activation_dim);
      }
      cached_sig = sig;
      man.timings.push_back({tag + ":data", seconds_since(t0)});
      say(tag + ": data ready (" + std::to_string(data.m()) + " x " + std::to_string(data.n()) + ")");
    }
    if (pc.synthetic()) write_dictionary(pr.dir / "ground_truth.saec", a_gt);
    const bool have_gt = pc.synthetic();
    const Dictionary* gt_for_trace = have_gt && pc.analysis.gt_mcc ? &a_gt : nullptr;
    const Dictionary* gt_for_analysis = have_gt ? &a_gt : nullptr;

    TrainConfig tcfg = pc.train;
    tcfg.keep_snapshots = (pc.analysis.pw_mcc || pc.analysis.intersection_ratio) && pc.train.seeds.size() >= 2;

    std::vector<Job> jobs;
    for (std::size_t a = 0; a < pc.archs.size(); ++a)
      for (auto s : pc.train.seeds) jobs.push_back({a, s});
    std::vector<std::optional<TrainResult>> trained(jobs.size());
    std::vector<RunSummary> summaries(jobs.size());
    std::vector<double> job_seconds(jobs.size(), 0.0);

    parallel_for(jobs.size(), workers, [&](std::size_t lo, std::size_t hi) {
      for (std::size_t j = lo; j < hi; ++j) {
        const Arch arch = pc.archs[jobs[j].arch_index];
        auto& sum = summaries[j];
        sum.arch = arch;
        sum.seed = jobs[j].seed;
        sum.dir = pr.dir / to_string(arch) / std::to_string(jobs[j].seed);
        const auto t0 = Clock::now();
        try {
          fs::create_directories(sum.dir);
          TrainConfig rc = tcfg;
          if (rc.checkpoint_interval > 0) rc.checkpoint_dir = sum.dir / "checkpoints";
          auto res = train(init_model(arch, data.m(), pc.d_sae, pc.arch_params, jobs[j].seed), data, rc,
                           gt_for_trace, jobs[j].seed);
          write_model(sum.dir / "model.saec", res.model);
          write_dictionary(sum.dir / "dictionary.saec", res.model.W_dec);
          write_trace_csv(res.trace, sum.dir / "trace.csv");
          sum.ok = true;
          const auto& last = res.trace.records.back();
          sum.final_recon_loss = last.recon_loss;
          sum.final_mean_l0 = last.mean_l0;
          if (gt_for_trace) sum.final_gt_mcc = res.trace.final_gt_mcc(rc.eval_interval);
          trained[j] = std::move(res);
        } catch (const std::exception& e) {
          sum.ok = false;
          sum.error = e.what();
        }
        job_seconds[j] = seconds_since(t0);
      }
    });

    for (std::size_t j = 0; j < jobs.size(); ++j) {
      const auto& s = summaries[j];
      man.timings.push_back({tag + ":" + to_string(s.arch) + ":seed" + std::to_string(s.seed), job_seconds[j]});
      if (!s.ok) man.failures.push_back(tag + ":" + to_string(s.arch) + ":seed" + std::to_string(s.seed) + ": " + s.error);
      say(tag + ": " + to_string(s.arch) + " seed " + std::to_string(s.seed) +
          (s.ok ? " done" + (s.final_gt_mcc ? " gt_mcc=" + num(*s.final_gt_mcc) : std::string()) : " FAILED: " + s.error));
    }

    const auto t_an = Clock::now();
    const auto spec = pc.ground_truth_spec();
    for (std::size_t a = 0; a < pc.archs.size(); ++a) {
      AnalysisInputs in;
      in.arch = pc.archs[a];
      in.data = &data;
      in.ground_truth = gt_for_analysis;
      in.total_steps = pc.train.steps;
      in.eval_interval = pc.train.eval_interval;
      in.workers = workers;
      if (have_gt) {
        in.cluster_probabilities = cluster_probabilities(spec.law, spec.clusters);
        in.cluster_size = spec.cluster_size();
      }
      std::vector<RunSummary> arch_runs;
      for (std::size_t j = 0; j < jobs.size(); ++j) {
        if (jobs[j].arch_index != a) continue;
        arch_runs.push_back(summaries[j]);
        if (trained[j]) {
          in.models.push_back(std::move(trained[j]->model));
          in.traces.push_back(std::move(trained[j]->trace));
          trained[j].reset();
        }
      }
      AnalysisToggles tg = pc.analysis;
      tg.gt_mcc = tg.gt_mcc && have_gt;
      ArchReport rep = analyze_runs(in, tg);
      rep.runs = std::move(arch_runs);
      for (auto& r : rep.runs) r.dir = fs::relative(r.dir, result.dir);
      const std::string an = to_string(rep.arch);
      write_text(pr.dir / "analysis" / ("report_" + an + ".json"), to_json(rep) + "\n");
      if (rep.consistency.binned) {
        std::string csv = "i,j,similarity,freq_a,freq_b,min_freq,bin\n";
        for (const auto& p : rep.consistency.binned->pairs)
          csv += std::to_string(p.i) + "," + std::to_string(p.j) + "," + num(p.similarity) + "," + num(p.freq_a) + "," +
                 num(p.freq_b) + "," + num(p.min_freq) + "," + std::to_string(p.bin) + "\n";
        write_text(pr.dir / "analysis" / ("pairs_" + an + ".csv"), csv);
      }
      std::size_t ok = 0;
      for (const auto& r : rep.runs) ok += r.ok;
      summary += pr.label + "," + value + "," + an + "," + std::to_string(ok) + "," +
                 (rep.mean_gt_mcc ? num(*rep.mean_gt_mcc) : "") + "," +
                 (std::isfinite(rep.consistency.mean_pw_mcc) ? num(rep.consistency.mean_pw_mcc) : "") + "\n";
      say(tag + ": " + an + " mean_gt_mcc=" + (rep.mean_gt_mcc ? num(*rep.mean_gt_mcc) : "n/a") +
          " mean_pw_mcc=" + (std::isfinite(rep.consistency.mean_pw_mcc) ? num(rep.consistency.mean_pw_mcc) : "n/a"));
      pr.archs.push_back(std::move(rep));
    }
    for (PlotKind kind : {PlotKind::MccCurves, PlotKind::FreqSimilarity, PlotKind::Contribution, PlotKind::Capacity}) {
      try {
        emit_plot_data(pr, kind, pr.dir / "analysis");
      } catch (const std::runtime_error&) {
        // Series not produced by this configuration.
      }
    }
    man.timings.push_back({tag + ":analysis", seconds_since(t_an)});
    result.points.push_back(std::move(pr));
  }

  write_text(result.dir / "summary.csv", summary);
  man.checks = preset_checks(cfg, result.points);
  for (const auto& c : man.checks) say("check " + c.name + ": " + (c.passed ? "PASS" : "FAIL") + " (" + c.detail + ")");
  man.timings.push_back({"total", seconds_since(t_all)});
  man.files = inventory(result.dir);
  write_text(result.dir / "manifest.json", to_json(man) + "\n");
  return result;
}

}  // namespace saelab
