// Acceptance runner: `molddp_acceptance --criterion N --workdir DIR` prints
// one "AC<N> PASS|FAIL: ..." line and exits 0 on pass, 1 on fail. Corpora
// are generated on first use and cached under DIR.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <thread>

#include "model_check.hpp"
#include "molddp/molddp.hpp"

using namespace molddp;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

using clock_type = std::chrono::steady_clock;

double seconds_since(clock_type::time_point t0) {
  return std::chrono::duration<double>(clock_type::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

void note(const std::string& s) { std::cout << "  " << s << "\n" << std::flush; }

// Builds the corpus once; later runs reuse it.
void once(const fs::path& marker, const std::function<void()>& build) {
  if (fs::exists(marker)) return;
  build();
  std::ofstream(marker) << "ok\n";
}

struct MolCorpus {
  fs::path csv, gpack, object;
};

/// Synthetic molecules as CSV plus their gpack and object-store containers.
MolCorpus molecular_corpus(const fs::path& work, const std::string& name, std::int64_t count, std::uint64_t seed) {
  MolCorpus c{work / (name + ".csv"), work / (name + ".gpack"), work / (name + ".obj")};
  once(work / (name + ".done"), [&] {
    const auto t0 = clock_type::now();
    synth::CorpusOptions o;
    o.count = count;
    o.seed = seed;
    synth::write_csv(c.csv, synth::generate_corpus(o));
    PreprocessOptions p;
    p.input = c.csv;
    p.overwrite = true;
    p.output = c.gpack;
    p.subfiles = 4;
    const auto a = preprocess(p);
    p.output = c.object;
    p.format = ContainerFormat::Object;
    const auto b = preprocess(p);
    require(a.failures.empty() && b.failures.empty(), ErrorKind::SourceUnreadable, "synthetic corpus has bad records");
    note(fmt("built %s (%lld molecules) in %.1f s", name.c_str(), static_cast<long long>(count), seconds_since(t0)));
  });
  return c;
}

ModelConfig small_config(int node_features, int hidden, int layers, int fc) {
  ModelConfig c;
  c.node_features = node_features;
  c.hidden_width = hidden;
  c.num_conv_layers = layers;
  c.fc_layers = fc;
  return c;
}

std::string names(const std::vector<Aggregator>& a, const std::vector<Scaler>& s) {
  std::string out;
  for (auto x : a) out += std::string(to_string(x)) + "+";
  out.back() = '/';
  for (auto x : s) out += std::string(to_string(x)) + "+";
  out.pop_back();
  return out;
}

Verdict ac1(const fs::path&) {
  const auto t0 = clock_type::now();
  Rng rng(101);
  double worst = 0;
  std::string where;
  std::size_t checks = 0, entries = 0;
  int over = 0;
  for (const auto& [aggs, scalers] : check::all_combinations())
    for (bool edges : {true, false}) {
      auto cfg = small_config(6, 5, 2, 2);
      cfg.aggregators = aggs;
      cfg.scalers = scalers;
      cfg.use_edge_features = edges;
      const auto seed = rng.next();
      Model<double> m(cfg, rng.uniform(0.5, 2.0), seed);
      check::randomize_biases(m, rng);
      const auto graphs = check::random_graphs(rng, 20, 6);
      const auto batch = check::batch_of<double>(graphs);
      const auto r = check::gradient_check(m, batch);
      entries += r.entries;
      ++checks;
      if (r.max_rel > 1e-5) {
        ++over;
        // a smaller step separates truncation error from a wrong gradient
        const auto fine = check::gradient_check(m, batch, 1e-7);
        note(fmt("%s%s: %.2e at %s (h=1e-7: %.2e)", names(aggs, scalers).c_str(), edges ? " edges" : "", r.max_rel,
                 r.worst_tensor.c_str(), fine.max_rel));
      }
      if (r.max_rel > worst) {
        worst = r.max_rel;
        where = names(aggs, scalers) + (edges ? " edges " : " no-edges ") + r.worst_tensor;
      }
    }
  const double secs = seconds_since(t0);
  return {worst <= 1e-5 && secs < 60,
          fmt("%zu configurations x 20 graphs, %zu parameter entries, %d over 1e-5, max rel err %.2e at %s, %.1f s",
              checks, entries, over, worst, where.c_str(), secs)};
}

Verdict ac2(const fs::path&) {
  const auto t0 = clock_type::now();
  const auto src = check::synth_source(10000, 202, synth::Target::HomoLumoGap);
  const auto split = split_dataset(src.size(), {});
  auto opt = TrainOptions{};
  opt.hyper.local_batch_size = 128;
  opt.world_size = 1;
  opt.seed = 7;
  opt.max_steps = 50;
  opt.algo = AllreduceAlgo::Naive;
  opt.validate = false;
  opt.final_parity = false;
  opt.delta = degree_statistic(src, split.train);
  const auto ref = run_training<double>(src, split, opt).model->flat_values();
  double worst = 0;
  std::string per;
  for (int W : {2, 4, 8}) {
    opt.world_size = W;
    opt.hyper.local_batch_size = 128 / W;
    const auto res = run_training<double>(src, split, opt);
    require(res.model->step() == 50, ErrorKind::InvalidArgument, "run stopped early");
    const double d = check::max_relative_divergence<double>(res.model->flat_values(), ref);
    worst = std::max(worst, d);
    per += fmt(" W=%d:%.2e", W, d);
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-6 && secs < 600,
          fmt("50 steps, %zu parameters, max rel divergence vs batch-128 single process:%s, %.1f s", ref.size(),
              per.c_str(), secs)};
}

Verdict ac3(const fs::path& work) {
  const auto t0 = clock_type::now();
  const auto c = molecular_corpus(work, "mol10k", 10000, 303);
  InlineSource inl(c.csv, {});
  ObjectSource obj(c.object);
  PackedSource pak(c.gpack, gpack::ReadMode::Preload);
  PackedSource lazy(c.gpack, gpack::ReadMode::OnDemand);
  const std::vector<const GraphSource*> sources{&inl, &obj, &pak, &lazy};
  const char* labels[] = {"inline", "object", "gpack-preload", "gpack-ondemand"};
  bool same = inl.size() == 10000 && obj.size() == 10000 && pak.size() == 10000;
  std::vector<std::int64_t> all(10000);
  std::iota(all.begin(), all.end(), 0);
  // shuffled shards at two world sizes, plus a random index list with repeats
  Rng rng(33);
  std::vector<std::int64_t> picks(5000);
  for (auto& i : picks) i = static_cast<std::int64_t>(rng.below(10000));
  std::string sums;
  for (const auto& [indices, W] : {std::pair{all, 1}, std::pair{all, 4}, std::pair{picks, 1}}) {
    BenchOptions o;
    o.batch_size = 128;
    o.world_size = W;
    o.seed = 9;
    std::vector<std::uint32_t> got;
    for (const auto* s : sources) got.push_back(load_epoch(*s, indices, o).second);
    for (auto g : got) same = same && g == got[0];
    sums += fmt(" %08x", got[0]);
    for (std::size_t k = 1; k < got.size(); ++k)
      if (got[k] != got[0]) sums += fmt("(%s %08x)", labels[k], got[k]);
  }
  const double secs = seconds_since(t0);
  return {same && secs < 300, fmt("4 readers x 3 index streams, checksums%s, %.1f s", sums.c_str(), secs)};
}

Verdict ac4(const fs::path& work) {
  const auto t0 = clock_type::now();
  Rng rng(404);
  const int nf = 9;
  std::vector<GraphSample> samples;
  samples.reserve(100000);
  for (std::int64_t i = 0; i < 100000; ++i) samples.push_back(check::random_graph(rng, i, nf, 1, 12));
  gpack::GpackSchema s;
  s.node_features = nf;
  s.vocab = {"H", "C", "N", "O", "F", "S"};
  const auto path = work / "rand100k.gpack";
  gpack::write_container(path, s, samples, 4, 2, true);
  std::int64_t bad = 0;
  for (auto mode : {gpack::ReadMode::OnDemand, gpack::ReadMode::Preload}) {
    gpack::GpackReader r(path, mode);
    bad += r.num_graphs() != 100000;
    for (std::int64_t i = 0; i < r.num_graphs(); ++i) bad += !bit_equal(r.read_graph(i), samples[static_cast<std::size_t>(i)]);
  }
  const auto c = molecular_corpus(work, "mol100k", 100000, 505);
  const double packed = static_cast<double>(disk_usage(c.gpack)), object = static_cast<double>(disk_usage(c.object));
  const double ratio = packed / object;
  return {bad == 0 && ratio <= 0.8,
          fmt("100000 random graphs, %lld mismatches over both read modes; molecular corpus gpack %.1f MB vs object "
              "%.1f MB, ratio %.3f; %.1f s",
              static_cast<long long>(bad), packed / 1e6, object / 1e6, ratio, seconds_since(t0))};
}

Verdict ac5(const fs::path& work) {
  const auto t0 = clock_type::now();
  const auto c = molecular_corpus(work, "mol100k", 100000, 505);
  BenchOptions o;
  o.targets = {{Backend::Inline, c.csv}, {Backend::Object, c.object}, {Backend::Packed, c.gpack}};
  o.repeats = 5;
  o.cold_cache = true;
  const auto rep = run_bench_io(o);
  std::map<Backend, double> med;
  bool cold = true;
  for (const auto& r : rep.results) {
    med[r.backend] = r.median;
    cold = cold && r.cold;
    note(fmt("%-7s median %.3f s (min %.3f, max %.3f), %lld samples, %.1f MB on disk",
             std::string(to_string(r.backend)).c_str(), r.median, r.min, r.max, static_cast<long long>(r.samples),
             static_cast<double>(r.bytes_on_disk) / 1e6));
  }
  const double vs_obj = med[Backend::Packed] / med[Backend::Object];
  const double vs_inl = med[Backend::Packed] / med[Backend::Inline];
  const double secs = seconds_since(t0);
  return {rep.checksums_match && vs_obj <= 0.5 && vs_inl <= 0.5 && secs < 1800,
          fmt("packed/object %.3f, packed/inline %.3f, checksums %s, page cache %s, %.1f s", vs_obj, vs_inl,
              rep.checksums_match ? "match" : "differ", cold ? "dropped system-wide" : "evicted per file", secs)};
}

Verdict ac6(const fs::path&) {
  const unsigned cores = std::thread::hardware_concurrency();
  note(fmt("hardware threads: %u", cores));
  const auto src = check::synth_source(12800, 606, synth::Target::HomoLumoGap);
  DatasetSplit split;
  split.train.resize(12800);
  std::iota(split.train.begin(), split.train.end(), 0);
  TrainOptions opt;
  opt.hyper.local_batch_size = 32;
  opt.hyper.max_epochs = 1;
  opt.validate = false;
  opt.final_parity = false;
  opt.delta = degree_statistic(src, split.train);
  std::map<int, double> epoch;
  bool decomposes = true, enough = true;
  for (int W : {1, 2, 4, 8}) {
    opt.world_size = W;
    const auto res = run_training<float>(src, split, opt);
    double slowest = 0;
    PhaseTimings sum;
    for (const auto& t : res.timings) {
      slowest = std::max(slowest, t.total);
      const double parts = t.dataload + t.forward + t.backward + t.optimizer + t.gradient_aggregation;
      decomposes = decomposes && t.total >= parts - 1e-3;
      enough = enough && t.batches >= 50;
      sum.dataload += t.dataload;
      sum.forward += t.forward;
      sum.backward += t.backward;
      sum.optimizer += t.optimizer;
      sum.gradient_aggregation += t.gradient_aggregation;
      sum.total += t.total;
    }
    epoch[W] = slowest;
    const double tot = sum.total;
    note(fmt("W=%d epoch %.2f s, %lld batches/rank; share of rank time: load %.1f%% fwd %.1f%% bwd %.1f%% opt %.1f%% "
             "allreduce %.1f%%",
             W, slowest, static_cast<long long>(res.timings.front().batches), 100 * sum.dataload / tot,
             100 * sum.forward / tot, 100 * sum.backward / tot, 100 * sum.optimizer / tot,
             100 * sum.gradient_aggregation / tot));
  }
  bool scales = true;
  std::string sp;
  for (int W : {2, 4, 8}) {
    const double s = epoch[1] / epoch[W];
    scales = scales && s >= 0.7 * W;
    sp += fmt(" W=%d:%.2fx(need %.1fx)", W, s, 0.7 * W);
  }
  return {scales && decomposes && enough,
          fmt("speedup%s; timings decompose: %s; %u hardware threads", sp.c_str(), decomposes ? "yes" : "no", cores)};
}

Verdict ac7(const fs::path&) {
  const auto t0 = clock_type::now();
  // (a) default model, scaled heavy-atom count
  const auto heavy = check::synth_source(20000, 707, synth::Target::HeavyAtoms);
  const auto hs = split_dataset(heavy.size(), {});
  TrainOptions a;
  a.hyper.max_epochs = 30;
  a.seed = 1;
  a.stop_below_val_mae = 0.05;
  a.final_parity = false;
  const auto ra = run_training<float>(heavy, hs, a);
  double best = 1e300;
  int reached = -1;
  for (const auto& h : ra.history) {
    note(fmt("heavy-atom epoch %d: train MAE %.4f, val MAE %.4f", h.epoch + 1, h.train_mae, h.val_mae));
    best = std::min(best, h.val_mae);
    if (reached < 0 && h.val_mae < 0.05) reached = h.epoch + 1;
  }
  const bool pass_a = reached > 0 && reached <= 30;
  note(fmt("part a: %.1f s", seconds_since(t0)));

  // (b) 50k molecules with orbital-gap targets, 5-epoch moving average of train MAE
  const auto gap = check::synth_source(50000, 708, synth::Target::HomoLumoGap);
  const auto gs = split_dataset(gap.size(), {});
  TrainOptions b;
  b.hyper.max_epochs = 10;
  b.seed = 2;
  b.validate = true;
  b.final_parity = false;
  const auto rb = run_training<float>(gap, gs, b);
  std::vector<double> mae;
  for (const auto& h : rb.history) {
    mae.push_back(h.train_mae);
    note(fmt("gap epoch %d: train MAE %.4f eV, val MAE %.4f eV", h.epoch + 1, h.train_mae, h.val_mae));
  }
  std::vector<double> avg;
  for (std::size_t k = 0; k + 5 <= mae.size(); ++k) avg.push_back(std::accumulate(mae.begin() + k, mae.begin() + k + 5, 0.0) / 5);
  bool monotone = avg.size() >= 2;
  std::string ma;
  for (std::size_t k = 0; k < avg.size(); ++k) {
    ma += fmt(" %.4f", avg[k]);
    if (k > 0) monotone = monotone && avg[k] <= avg[k - 1];
  }
  return {pass_a && monotone,
          fmt("heavy-atom val MAE %.4f, below 0.05 at epoch %d; gap train MAE moving average%s (%s); %.1f s", best,
              reached, ma.c_str(), monotone ? "non-increasing" : "not monotone", seconds_since(t0))};
}

Verdict ac8(const fs::path&) {
  std::ifstream in(std::string(MOLDDP_TEST_DATA) + "/smiles_fixture.csv");
  if (!in) return {false, "fixture missing"};
  std::string line;
  std::getline(in, line);
  int rows = 0, ok = 0;
  std::string first_bad;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::stringstream ss(line);
    std::string smi, heavy, bonds, hyd, per;
    std::getline(ss, smi, ',');
    std::getline(ss, heavy, ',');
    std::getline(ss, bonds, ',');
    std::getline(ss, hyd, ',');
    std::getline(ss, per, ',');
    ++rows;
    try {
      const auto m = parse_smiles(smi);
      std::vector<int> want, got;
      std::stringstream ps(per);
      for (std::string t; std::getline(ps, t, ';');) want.push_back(std::stoi(t));
      for (const auto& a : m.atoms) got.push_back(a.implicit_h);
      if (static_cast<int>(m.atoms.size()) == std::stoi(heavy) && static_cast<int>(m.bonds.size()) == std::stoi(bonds) &&
          m.implicit_hydrogens() == std::stoi(hyd) && got == want)
        ++ok;
      else if (first_bad.empty())
        first_bad = smi;
    } catch (const Error& e) {
      if (first_bad.empty()) first_bad = smi + " (" + e.what() + ")";
    }
  }
  const std::vector<std::pair<std::string, ErrorKind>> malformed{
      {"", ErrorKind::EmptyInput},           {"C(", ErrorKind::UnbalancedBranch},
      {"CC)", ErrorKind::UnbalancedBranch},  {"C1CC", ErrorKind::UnclosedRing},
      {"CXC", ErrorKind::UnknownElement},    {"[Xx]", ErrorKind::UnknownElement},
      {"[N+-]", ErrorKind::MalformedCharge}, {"[C+20]", ErrorKind::MalformedCharge},
      {"[N+a]", ErrorKind::MalformedBracketAtom}, {"[NH4+", ErrorKind::MalformedBracketAtom},
      {"[]", ErrorKind::MalformedBracketAtom}, {"[13CH4]", ErrorKind::Unsupported}};
  int kinds_ok = 0;
  std::string wrong;
  for (const auto& [smi, kind] : malformed) {
    std::optional<ErrorKind> got;
    try {
      parse_smiles(smi);
    } catch (const Error& e) {
      got = e.kind();
    }
    if (got == kind) ++kinds_ok;
    else wrong += " '" + smi + "'";
  }
  const bool pass = rows == 1000 && ok == rows && kinds_ok == static_cast<int>(malformed.size());
  return {pass, fmt("fixture %d/%d match%s; malformed inputs %d/%zu give the expected kind%s", ok, rows,
                    first_bad.empty() ? "" : (", first mismatch " + first_bad).c_str(), kinds_ok, malformed.size(),
                    wrong.empty() ? "" : (", wrong:" + wrong).c_str())};
}

Verdict ac9(const fs::path&) {
  const int cases = 200;
  Rng rng(909);
  std::map<std::string, int> passed;
  double perm_worst = 0, batch_worst = 0, pool_worst = 0;
  const std::vector<Aggregator> all_aggs{Aggregator::Mean, Aggregator::Min, Aggregator::Max, Aggregator::Std};
  const std::vector<Scaler> all_scalers{Scaler::Identity, Scaler::Amplification, Scaler::Attenuation};
  for (int c = 0; c < cases; ++c) {
    auto cfg = small_config(6, 3 + static_cast<int>(rng.below(6)), 1 + static_cast<int>(rng.below(3)),
                            1 + static_cast<int>(rng.below(2)));
    cfg.aggregators = all_aggs;
    cfg.scalers = all_scalers;
    cfg.use_edge_features = rng.chance(0.5);
    const auto model_seed = rng.next();
    Model<double> m(cfg, rng.uniform(0.5, 2.5), model_seed);
    check::randomize_biases(m, rng);

    // permutation invariance
    const auto g = check::random_graph(rng, c, 6, 1, 12);
    std::vector<std::int64_t> perm(static_cast<std::size_t>(g.num_nodes));
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(std::span<std::int64_t>(perm));
    const std::vector<GraphSample> one{g}, permuted{check::permute_nodes(g, perm, rng)};
    const double ya = m.forward(check::batch_of<double>(one))(0);
    const double yb = m.forward(check::batch_of<double>(permuted))(0);
    const double rel = std::abs(ya - yb) / std::max(std::abs(ya), 1e-300);
    perm_worst = std::max(perm_worst, rel);
    passed["permutation"] += rel <= 1e-6;

    // batch independence
    auto mix = check::random_graphs(rng, 1 + rng.below(8), 6);
    const auto at = rng.below(mix.size() + 1);
    mix.insert(mix.begin() + static_cast<std::ptrdiff_t>(at), g);
    const double inside = m.forward(check::batch_of<double>(mix))(static_cast<Eigen::Index>(at));
    batch_worst = std::max(batch_worst, std::abs(inside - ya));
    passed["batch"] += std::abs(inside - ya) <= 1e-12;

    // pooling symmetry: shuffle node rows inside each graph
    const auto G = 1 + static_cast<std::int64_t>(rng.below(6));
    std::vector<std::int64_t> bv;
    for (std::int64_t k = 0; k < G; ++k) bv.insert(bv.end(), 1 + rng.below(10), k);
    const auto N = static_cast<Eigen::Index>(bv.size());
    const auto F = 1 + static_cast<Eigen::Index>(rng.below(7));
    Mat<double> x(N, F), y(N, F);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform(-3, 3);
    std::vector<std::int64_t> rows(bv.size());
    std::iota(rows.begin(), rows.end(), 0);
    for (std::size_t lo = 0; lo < bv.size();) {
      std::size_t hi = lo;
      while (hi < bv.size() && bv[hi] == bv[lo]) ++hi;
      rng.shuffle(std::span<std::int64_t>(rows).subspan(lo, hi - lo));
      lo = hi;
    }
    for (Eigen::Index i = 0; i < N; ++i) y.row(i) = x.row(static_cast<Eigen::Index>(rows[static_cast<std::size_t>(i)]));
    const double pd = (global_mean_pool<double>(x, bv, G) - global_mean_pool<double>(y, bv, G)).cwiseAbs().maxCoeff();
    pool_worst = std::max(pool_worst, pd);
    passed["pooling"] += pd <= 1e-12;

    // shard disjointness and coverage
    const auto n = static_cast<std::int64_t>(rng.below(500));
    const int W = 1 + static_cast<int>(rng.below(9));
    std::vector<std::int64_t> global(static_cast<std::size_t>(n));
    for (auto& v : global) v = static_cast<std::int64_t>(rng.below(1u << 30));
    std::sort(global.begin(), global.end());
    global.erase(std::unique(global.begin(), global.end()), global.end());
    const std::set<std::int64_t> universe(global.begin(), global.end());
    std::set<std::int64_t> seen;
    bool shard_ok = true;
    const auto seed = rng.next(), epoch = rng.below(100);
    for (int r = 0; r < W; ++r) {
      const auto s = shard_indices(global, r, W, seed, epoch);
      shard_ok = shard_ok && s.size() == global.size() / static_cast<std::size_t>(W);
      for (auto v : s) shard_ok = shard_ok && universe.count(v) && seen.insert(v).second;
    }
    shard_ok = shard_ok && seen.size() == static_cast<std::size_t>(W) * (global.size() / static_cast<std::size_t>(W));
    passed["shard"] += shard_ok;

    // AdamW with zero gradient and fresh moments is pure decay
    Hyper hp;
    hp.learning_rate = rng.uniform(1e-5, 1e-1);
    hp.weight_decay = rng.uniform(0, 0.5);
    Model<double> fresh(cfg, 1.0, rng.next());
    const auto before = fresh.flat_values();
    fresh.zero_grad();
    fresh.adamw_step(hp);
    const auto after = fresh.flat_values();
    const double decay = 1.0 - hp.learning_rate * hp.weight_decay;
    bool exact = true;
    for (std::size_t i = 0; i < before.size(); ++i) exact = exact && after[i] == before[i] * decay;
    passed["adamw"] += exact;
  }
  bool pass = true;
  std::string counts;
  for (const auto& [k, v] : passed) {
    pass = pass && v == cases;
    counts += fmt(" %s %d/%d", k.c_str(), v, cases);
  }
  return {pass, fmt("%s; worst permutation rel %.1e, batch abs %.1e, pooling abs %.1e", counts.c_str() + 1, perm_worst,
                    batch_worst, pool_worst)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"molddp acceptance criteria"};
  int criterion = 0;
  fs::path workdir = fs::temp_directory_path() / "molddp-acceptance";
  app.add_option("--criterion", criterion, "criterion number")->required()->check(CLI::Range(1, 9));
  app.add_option("--workdir", workdir, "cache directory for generated corpora");
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(workdir);

  const std::vector<Verdict (*)(const fs::path&)> table{ac1, ac2, ac3, ac4, ac5, ac6, ac7, ac8, ac9};
  Verdict v;
  try {
    v = table[static_cast<std::size_t>(criterion - 1)](workdir);
  } catch (const std::exception& e) {
    v = {false, std::string("error: ") + e.what()};
  }
  std::cout << "AC" << criterion << (v.pass ? " PASS: " : " FAIL: ") << v.detail << std::endl;
  return v.pass ? 0 : 1;
}
