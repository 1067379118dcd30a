// molddp command-line driver: synth, preprocess, inspect, train, bench-io.
//
// Every option can also come from a MOLDDP_<NAME> environment variable or a
// flat `key = value` file given with --config. Precedence is command line,
// then config file, then environment, then built-in defaults.

#include <sys/wait.h>
#include <unistd.h>

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>

#include "molddp/molddp.hpp"
#include "molddp/preprocess.hpp"

namespace fs = std::filesystem;
using namespace molddp;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitThreshold = 2;

std::string env_name(const std::string& flag) {
  std::string e = "MOLDDP_";
  for (char c : flag) e += c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return e;
}

template <class V>
CLI::Option* opt(CLI::App* app, const std::string& name, V& value, const std::string& help) {
  return app->add_option("--" + name, value, help)->envname(env_name(name))->capture_default_str();
}

CLI::Option* flag(CLI::App* app, const std::string& name, bool& value, const std::string& help) {
  return app->add_flag("--" + name, value, help)->envname(env_name(name));
}

// Flat `key = value` files: keys without a section apply to the subcommand
// being run.
class FlatConfig : public CLI::ConfigINI {
 public:
  explicit FlatConfig(const CLI::App& root) : root_(&root) {}

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    auto items = CLI::ConfigINI::from_config(input);
    const auto subs = root_->get_subcommands();
    if (!subs.empty())
      for (auto& item : items)
        if (item.parents.empty() && !root_->get_option_no_throw("--" + item.name))
          item.parents = {subs.front()->get_name()};
    return items;
  }

 private:
  const CLI::App* root_;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---------------------------------------------------------------- synth

struct SynthArgs {
  std::string output;
  std::int64_t count = 1000;
  std::uint64_t seed = 0;
  std::string target = "gap";
  int min_units = 0;
  int max_units = 6;
};

int cmd_synth(const SynthArgs& a) {
  synth::CorpusOptions o;
  o.count = a.count;
  o.seed = a.seed;
  o.min_units = a.min_units;
  o.max_units = a.max_units;
  o.target = a.target == "heavy" ? synth::Target::HeavyAtoms : synth::Target::HomoLumoGap;
  synth::write_csv(a.output, synth::generate_corpus(o));
  std::cout << "wrote " << a.count << " molecules to " << a.output << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- preprocess

struct PreprocessArgs {
  std::string input, output, format = "gpack", error_log;
  int workers = 1;
  std::uint32_t subfiles = 1;
  std::string smiles_column = "smiles", target_column = "gap";
  char delimiter = ',';
  double max_failure_rate = 0.05;
  bool overwrite = false;
};

void print_summary(const std::string& name, const gpack::DatasetSummary& s, std::uint64_t bytes) {
  std::printf("%-24s %12s %14s %14s %10s %14s\n", "dataset", "graphs", "nodes", "edges", "avg_nodes", "bytes");
  std::printf("%-24s %12llu %14llu %14llu %10.1f %14llu\n", name.c_str(),
              static_cast<unsigned long long>(s.num_graphs), static_cast<unsigned long long>(s.total_nodes),
              static_cast<unsigned long long>(s.total_edges), s.avg_nodes_per_graph,
              static_cast<unsigned long long>(bytes));
}

int cmd_preprocess(const PreprocessArgs& a) {
  PreprocessOptions o;
  o.input = a.input;
  o.output = a.output;
  o.format = a.format == "object" ? ContainerFormat::Object : ContainerFormat::Gpack;
  o.workers = a.workers;
  o.subfiles = a.subfiles;
  o.csv = {a.smiles_column, a.target_column, a.delimiter};
  o.max_failure_rate = a.max_failure_rate;
  o.overwrite = a.overwrite;

  PreprocessResult r;
  try {
    r = preprocess(o);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  std::ofstream log_file;
  if (!a.error_log.empty()) log_file.open(a.error_log);
  std::ostream& log = a.error_log.empty() ? std::cerr : log_file;
  for (const auto& f : r.failures)
    log << a.input << ":" << f.line << ": " << to_string(f.kind) << ": " << f.message << "\n";
  if (r.threshold_exceeded) {
    std::cerr << "error: " << r.failures.size() << " of " << r.records << " records failed, above the allowed rate "
              << a.max_failure_rate << "; nothing written\n";
    return kExitThreshold;
  }
  std::cout << "vocab:";
  for (const auto& s : r.vocab.symbols()) std::cout << ' ' << s;
  std::cout << "\nrejected: " << r.failures.size() << " of " << r.records << " records\n";
  print_summary(fs::path(a.output).filename().string(), r.summary, r.bytes_on_disk);
  return kExitOk;
}

// ---------------------------------------------------------------- inspect

struct InspectArgs {
  std::string path;
  std::int64_t graph = -1;
};

void dump_graph(const GraphSample& g) {
  std::printf("graph %lld: nodes=%lld edges=%lld y=", static_cast<long long>(g.id),
              static_cast<long long>(g.num_nodes), static_cast<long long>(g.num_edges));
  for (float v : g.y) std::printf("%.9g ", static_cast<double>(v));
  std::printf("\nx (%lld x %d):\n", static_cast<long long>(g.num_nodes), g.node_features);
  for (std::int64_t i = 0; i < g.num_nodes; ++i) {
    std::printf(" ");
    for (int f = 0; f < g.node_features; ++f)
      std::printf(" %g", static_cast<double>(g.x[static_cast<std::size_t>(i * g.node_features + f)]));
    std::printf("\n");
  }
  std::printf("edge_index (2 x %lld) / edge_attr (%lld x %d):\n", static_cast<long long>(g.num_edges),
              static_cast<long long>(g.num_edges), g.edge_features);
  for (std::int64_t e = 0; e < g.num_edges; ++e) {
    std::printf("  %lld -> %lld :", static_cast<long long>(g.source(e)), static_cast<long long>(g.target(e)));
    for (int f = 0; f < g.edge_features; ++f)
      std::printf(" %g", static_cast<double>(g.edge_attr[static_cast<std::size_t>(e * g.edge_features + f)]));
    std::printf("\n");
  }
}

int cmd_inspect(const InspectArgs& a) {
  try {
    const fs::path p = a.path;
    if (fs::exists(p / gpack::kIndexFile)) {
      gpack::GpackReader r(p);
      const auto& d = r.dataset();
      std::printf("format: gpack v%u, %u subfile(s), written by %u writer(s)\n", gpack::kFormatVersion,
                  d.num_subfiles, d.writer_count);
      std::printf("schema:\n");
      for (const auto& v : d.schema.variables()) {
        std::string shape;
        for (auto s : v.shape) {
          if (!shape.empty()) shape += ", ";
          shape += s == gpack::kDimNodes ? "nodes" : s == gpack::kDimEdges ? "edges" : std::to_string(s);
        }
        std::printf("  %-10s %s (%s)\n", v.name.c_str(), v.dtype == gpack::DType::F32 ? "f32" : "i64",
                    shape.c_str());
      }
      std::printf("  codec %u\n", d.schema.codec);
      std::printf("vocab:");
      for (const auto& s : d.schema.vocab) std::printf(" %s", s.c_str());
      std::printf("\nsubfiles:\n");
      for (std::size_t s = 0; s < d.extents.size(); ++s)
        std::printf("  data.%zu %12llu bytes %10llu graphs\n", s,
                    static_cast<unsigned long long>(d.extents[s].bytes),
                    static_cast<unsigned long long>(d.extents[s].graphs));
      print_summary(p.filename().string(), r.summary(), disk_usage(p));
      if (a.graph >= 0) dump_graph(r.read_graph(a.graph));
    } else if (fs::exists(p / objstore::kManifest)) {
      objstore::ObjectReader r(p);
      std::printf("format: object store, %lld records\n", static_cast<long long>(r.num_graphs()));
      std::printf("vocab:");
      for (const auto& s : r.manifest().vocab) std::printf(" %s", s.c_str());
      std::printf("\n");
      std::uint64_t nodes = 0, edges = 0;
      for (std::int64_t k = 0; k < r.num_graphs(); ++k) {
        const auto g = r.read(k);
        nodes += static_cast<std::uint64_t>(g.num_nodes);
        edges += static_cast<std::uint64_t>(g.num_edges);
      }
      print_summary(p.filename().string(), gpack::summarize(static_cast<std::uint64_t>(r.num_graphs()), nodes, edges),
                    disk_usage(p));
      if (a.graph >= 0) dump_graph(r.read(a.graph));
    } else {
      std::cerr << "error: " << p.string() << " is not a gpack container or object store\n";
      return kExitFailure;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << to_string(e.kind()) << ": " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitOk;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string data, backend = "gpack", out = "run", gpack_read = "preload";
  std::string config_file;
  int world_size = 1;
  int batch_size = 128;
  int epochs = 3;
  double lr = 1e-3;
  double weight_decay = 0.01;
  int layers = 6;
  int hidden = 55;
  int fc_layers = 2;
  std::uint64_t seed = 0;
  std::string precision = "f32";
  std::string aggregators = "mean,min,max,std";
  std::string scalers = "identity,amplification,attenuation";
  bool no_edge_features = false;
  std::string allreduce = "ring";
  std::string transport = "inproc";
  std::string rendezvous = "127.0.0.1:29500";
  int rank = -1;
  int prefetch = 0;
  double train_fraction = 0.94;
  std::string smiles_column = "smiles", target_column = "gap";
  int timeout_s = 300;
};

template <class E, class F>
std::vector<E> parse_list(const std::string& text, F parse_one) {
  std::vector<E> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(parse_one(item));
  return out;
}

Aggregator parse_aggregator(const std::string& s) {
  if (s == "mean") return Aggregator::Mean;
  if (s == "min") return Aggregator::Min;
  if (s == "max") return Aggregator::Max;
  if (s == "std") return Aggregator::Std;
  fail(ErrorKind::InvalidArgument, "unknown aggregator '" + s + "'");
}

Scaler parse_scaler(const std::string& s) {
  if (s == "identity") return Scaler::Identity;
  if (s == "amplification") return Scaler::Amplification;
  if (s == "attenuation") return Scaler::Attenuation;
  fail(ErrorKind::InvalidArgument, "unknown scaler '" + s + "'");
}

std::map<std::string, std::string> settings_of(const TrainArgs& a) {
  return {{"data", a.data},
          {"backend", a.backend},
          {"world_size", std::to_string(a.world_size)},
          {"batch_size", std::to_string(a.batch_size)},
          {"epochs", std::to_string(a.epochs)},
          {"lr", fmt("%.17g", a.lr)},
          {"weight_decay", fmt("%.17g", a.weight_decay)},
          {"layers", std::to_string(a.layers)},
          {"hidden", std::to_string(a.hidden)},
          {"fc_layers", std::to_string(a.fc_layers)},
          {"seed", std::to_string(a.seed)},
          {"precision", a.precision},
          {"aggregators", a.aggregators},
          {"scalers", a.scalers},
          {"edge_features", a.no_edge_features ? "off" : "on"},
          {"allreduce", a.allreduce},
          {"transport", a.transport},
          {"rendezvous", a.rendezvous},
          {"prefetch", std::to_string(a.prefetch)},
          {"gpack_read", a.gpack_read},
          {"train_fraction", fmt("%.17g", a.train_fraction)},
          {"config", a.config_file}};
}

template <class T>
void write_outputs(const TrainArgs& a, const WorkerResult<T>& res, double wall) {
  const fs::path out = a.out;
  fs::create_directories(out);
  MetricsReport rep;
  rep.dataset = a.data;
  rep.backend = a.backend;
  rep.precision = a.precision;
  rep.world_size = a.world_size;
  rep.seed = a.seed;
  rep.model = res.model->config();
  rep.hyper.learning_rate = a.lr;
  rep.hyper.local_batch_size = a.batch_size;
  rep.hyper.max_epochs = a.epochs;
  rep.hyper.weight_decay = a.weight_decay;
  rep.delta = res.delta;
  rep.num_parameters = res.model->num_parameters();
  rep.settings = settings_of(a);
  rep.timings = res.timings;
  rep.history = res.history;
  rep.train = res.train;
  rep.val = res.val;
  rep.test = res.test;
  rep.wall_seconds = wall;
  write_json(out / "metrics.json", to_json(rep));
  write_parity_csv(out / "parity.csv", {{"train", &res.train}, {"val", &res.val}, {"test", &res.test}});
  write_loss_csv(out / "loss.csv", res.history);

  for (const auto& h : res.history)
    std::printf("epoch %d  train_loss %.6f  train_mae %.6f  val_mae %.6f\n", h.epoch, h.train_loss, h.train_mae,
                h.val_mae);
  std::printf("final  train_mae %.6f  val_mae %.6f  test_mae %.6f  (%lld test graphs)\n", res.train.mae,
              res.val.mae, res.test.mae, static_cast<long long>(res.test.count));
  std::printf("wrote %s\n", (out / "metrics.json").string().c_str());
}

template <class T>
int train_as(const TrainArgs& a) {
  const auto t0 = std::chrono::steady_clock::now();
  InlineSource::Options inl;
  inl.csv.smiles_column = a.smiles_column;
  inl.csv.target_column = a.target_column;
  auto source = open_source(parse_backend(a.backend), a.data, inl, gpack::parse_read_mode(a.gpack_read));
  SplitSpec spec;
  spec.seed = a.seed;
  spec.train_fraction = a.train_fraction;
  const auto split = split_dataset(source->size(), spec);

  TrainOptions o;
  o.model.node_features = node_feature_count(source->vocab());
  o.model.num_conv_layers = a.layers;
  o.model.hidden_width = a.hidden;
  o.model.fc_layers = a.fc_layers;
  o.model.use_edge_features = !a.no_edge_features;
  o.model.aggregators = parse_list<Aggregator>(a.aggregators, parse_aggregator);
  o.model.scalers = parse_list<Scaler>(a.scalers, parse_scaler);
  o.hyper.learning_rate = a.lr;
  o.hyper.local_batch_size = a.batch_size;
  o.hyper.max_epochs = a.epochs;
  o.hyper.weight_decay = a.weight_decay;
  o.world_size = a.world_size;
  o.seed = a.seed;
  o.algo = a.allreduce == "naive" ? AllreduceAlgo::Naive : AllreduceAlgo::Ring;
  o.prefetch_depth = a.prefetch;
  o.checkpoint_dir = a.out;
  o.timeout = std::chrono::seconds(a.timeout_s);

  if (a.transport == "inproc" || a.world_size == 1) {
    auto res = run_training<T>(*source, split, o);
    write_outputs(a, res, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    return kExitOk;
  }
  TcpTransport t(a.rank, a.world_size, parse_endpoint(a.rendezvous), o.timeout);
  Communicator comm(t, o.timeout);
  try {
    auto res = run_worker<T>(comm, *source, split, o);
    if (a.rank == 0)
      write_outputs(a, res, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  } catch (const std::exception& e) {
    comm.abort("rank " + std::to_string(a.rank) + ": " + e.what());
    throw;
  }
  return kExitOk;
}

int run_train_rank(const TrainArgs& a) {
  try {
    return a.precision == "f64" ? train_as<double>(a) : train_as<float>(a);
  } catch (const Error& e) {
    std::cerr << "error";
    if (a.rank >= 0) std::cerr << " (rank " << a.rank << ")";
    std::cerr << ": " << to_string(e.kind()) << ": " << e.what() << "\n";
    return kExitFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

/// TCP transport without an explicit --rank: fork one process per rank on
/// this machine and wait for all of them.
int cmd_train(const TrainArgs& a) {
  if (a.transport != "tcp" || a.world_size == 1 || a.rank >= 0) return run_train_rank(a);
  std::cout.flush();
  std::fflush(nullptr);
  std::vector<pid_t> children;
  for (int r = 0; r < a.world_size; ++r) {
    const pid_t pid = ::fork();
    if (pid < 0) {
      std::cerr << "error: fork failed\n";
      return kExitFailure;
    }
    if (pid == 0) {
      TrainArgs mine = a;
      mine.rank = r;
      const int rc = run_train_rank(mine);
      std::cout.flush();
      std::fflush(nullptr);
      std::_Exit(rc);
    }
    children.push_back(pid);
  }
  int rc = kExitOk;
  for (pid_t pid : children) {
    int status = 0;
    ::waitpid(pid, &status, 0);
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) rc = kExitFailure;
  }
  return rc;
}

// ---------------------------------------------------------------- bench-io

struct BenchArgs {
  std::string inline_path, object_path, gpack_path, out, csv, gpack_read = "preload";
  int batch_size = 128;
  int repeats = 5;
  int world_size = 1;
  int prefetch = 0;
  bool warm = false;
  std::uint64_t seed = 0;
  std::int64_t limit = -1;
};

int cmd_bench_io(const BenchArgs& a) {
  BenchOptions o;
  if (!a.inline_path.empty()) o.targets.push_back({Backend::Inline, a.inline_path});
  if (!a.object_path.empty()) o.targets.push_back({Backend::Object, a.object_path});
  if (!a.gpack_path.empty()) o.targets.push_back({Backend::Packed, a.gpack_path});
  o.batch_size = a.batch_size;
  o.repeats = a.repeats;
  o.world_size = a.world_size;
  o.prefetch_depth = a.prefetch;
  o.cold_cache = !a.warm;
  o.seed = a.seed;
  o.limit = a.limit;
  o.packed_mode = gpack::parse_read_mode(a.gpack_read);
  BenchReport rep;
  try {
    rep = run_bench_io(o);
  } catch (const Error& e) {
    std::cerr << "error: " << to_string(e.kind()) << ": " << e.what() << "\n";
    return kExitFailure;
  }
  std::printf("%-8s %10s %10s %10s %10s %14s %s\n", "backend", "median_s", "min_s", "max_s", "samples", "bytes",
              "checksum");
  for (const auto& r : rep.results)
    std::printf("%-8s %10.4f %10.4f %10.4f %10lld %14llu %08x%s\n", std::string(to_string(r.backend)).c_str(),
                r.median, r.min, r.max, static_cast<long long>(r.samples),
                static_cast<unsigned long long>(r.bytes_on_disk), r.checksum, r.cold ? "" : "  (warm)");
  for (const auto& [k, v] : rep.speedups) std::printf("speedup %-14s %.3f\n", k.c_str(), v);
  if (!a.out.empty()) write_json(a.out, to_json(rep, o));
  if (!a.csv.empty()) write_bench_csv(a.csv, rep);
  if (!rep.checksums_match) {
    std::cerr << "error: backends produced different sample streams\n";
    return kExitFailure;
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Molecular graph preprocessing and data-parallel GCNN training"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "flat key = value settings file")->envname("MOLDDP_CONFIG");
  app.config_formatter(std::make_shared<FlatConfig>(app));

  SynthArgs sy;
  auto* s = app.add_subcommand("synth", "generate a synthetic smiles,gap corpus");
  opt(s, "output", sy.output, "output CSV path")->required();
  opt(s, "count", sy.count, "number of molecules")->check(CLI::PositiveNumber);
  opt(s, "seed", sy.seed, "random seed");
  opt(s, "target", sy.target, "gap (Hueckel HOMO-LUMO estimate) or heavy (scaled heavy-atom count)")
      ->check(CLI::IsMember({"gap", "heavy"}));
  opt(s, "min-units", sy.min_units, "minimum backbone units")->check(CLI::NonNegativeNumber);
  opt(s, "max-units", sy.max_units, "maximum backbone units")->check(CLI::NonNegativeNumber);

  PreprocessArgs pp;
  auto* p = app.add_subcommand("preprocess", "convert a SMILES table into a graph container");
  opt(p, "input", pp.input, "delimited text with a header row")->required();
  opt(p, "output", pp.output, "container directory")->required();
  opt(p, "format", pp.format, "gpack or object")->check(CLI::IsMember({"gpack", "object"}));
  opt(p, "workers", pp.workers, "parallel parse/encode/write workers")->check(CLI::PositiveNumber);
  opt(p, "subfiles", pp.subfiles, "gpack subfile count")->check(CLI::PositiveNumber);
  opt(p, "smiles-column", pp.smiles_column, "SMILES column name");
  opt(p, "target-column", pp.target_column, "target column name (eV)");
  opt(p, "delimiter", pp.delimiter, "field delimiter");
  opt(p, "max-failure-rate", pp.max_failure_rate, "fail with exit 2 above this fraction of bad records")
      ->check(CLI::Range(0.0, 1.0));
  opt(p, "error-log", pp.error_log, "write per-record errors here instead of stderr");
  flag(p, "overwrite", pp.overwrite, "replace an existing container");

  InspectArgs in;
  auto* i = app.add_subcommand("inspect", "print container metadata");
  i->add_option("path", in.path, "container directory")->required();
  i->add_option("--graph", in.graph, "dump one decoded graph");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "data-parallel training");
  opt(t, "data", tr.data, "container directory, or CSV for the inline backend")->required();
  opt(t, "backend", tr.backend, "inline, object or gpack")->check(CLI::IsMember({"inline", "object", "gpack"}));
  opt(t, "world-size", tr.world_size, "number of ranks")->check(CLI::PositiveNumber);
  opt(t, "batch-size", tr.batch_size, "local batch size per rank")->check(CLI::PositiveNumber);
  opt(t, "epochs", tr.epochs, "epochs")->check(CLI::NonNegativeNumber);
  opt(t, "lr", tr.lr, "AdamW learning rate")->check(CLI::PositiveNumber);
  opt(t, "weight-decay", tr.weight_decay, "AdamW decoupled weight decay")->check(CLI::NonNegativeNumber);
  opt(t, "layers", tr.layers, "PNA convolution layers")->check(CLI::PositiveNumber);
  opt(t, "hidden", tr.hidden, "hidden width")->check(CLI::PositiveNumber);
  opt(t, "fc-layers", tr.fc_layers, "hidden FC layers in the head")->check(CLI::NonNegativeNumber);
  opt(t, "seed", tr.seed, "seed for init, split and shuffling");
  opt(t, "precision", tr.precision, "f32 or f64")->check(CLI::IsMember({"f32", "f64"}));
  opt(t, "aggregators", tr.aggregators, "comma list of mean,min,max,std");
  opt(t, "scalers", tr.scalers, "comma list of identity,amplification,attenuation");
  flag(t, "no-edge-features", tr.no_edge_features, "ignore bond features in messages");
  opt(t, "allreduce", tr.allreduce, "ring or naive")->check(CLI::IsMember({"ring", "naive"}));
  opt(t, "transport", tr.transport, "inproc (threads) or tcp (processes)")->check(CLI::IsMember({"inproc", "tcp"}));
  opt(t, "rendezvous", tr.rendezvous, "host:port of rank 0 for tcp");
  opt(t, "rank", tr.rank, "this process's rank; omit to launch all ranks locally");
  opt(t, "gpack-read", tr.gpack_read, "preload or on-demand")->check(CLI::IsMember({"preload", "on-demand"}));
  opt(t, "prefetch", tr.prefetch, "batches to prefetch per rank")->check(CLI::NonNegativeNumber);
  opt(t, "train-fraction", tr.train_fraction, "fraction of data used for training")->check(CLI::Range(0.01, 0.99));
  opt(t, "smiles-column", tr.smiles_column, "SMILES column for the inline backend");
  opt(t, "target-column", tr.target_column, "target column for the inline backend");
  opt(t, "timeout", tr.timeout_s, "collective timeout in seconds")->check(CLI::PositiveNumber);
  opt(t, "out", tr.out, "output directory");

  BenchArgs bn;
  auto* b = app.add_subcommand("bench-io", "time pure data-loading epochs per backend");
  opt(b, "inline", bn.inline_path, "CSV for the inline backend");
  opt(b, "object", bn.object_path, "object store directory");
  opt(b, "gpack", bn.gpack_path, "gpack container directory");
  opt(b, "batch-size", bn.batch_size, "batch size")->check(CLI::PositiveNumber);
  opt(b, "repeats", bn.repeats, "repeats per backend (>= 3)")->check(CLI::Range(3, 1000));
  opt(b, "world-size", bn.world_size, "concurrent loader ranks")->check(CLI::PositiveNumber);
  opt(b, "gpack-read", bn.gpack_read, "preload or on-demand")->check(CLI::IsMember({"preload", "on-demand"}));
  opt(b, "prefetch", bn.prefetch, "batches to prefetch")->check(CLI::NonNegativeNumber);
  opt(b, "seed", bn.seed, "shuffle seed");
  opt(b, "limit", bn.limit, "only the first N graphs");
  flag(b, "warm", bn.warm, "skip dropping the page cache");
  opt(b, "out", bn.out, "JSON report path");
  opt(b, "csv", bn.csv, "per-repeat CSV path");

  CLI11_PARSE(app, argc, argv);

  if (*s) return cmd_synth(sy);
  if (*p) return cmd_preprocess(pp);
  if (*i) return cmd_inspect(in);
  if (*t) {
    if (const auto* c = app.get_config_ptr(); c && !c->results().empty()) tr.config_file = c->results().front();
    return cmd_train(tr);
  }
  if (*b) return cmd_bench_io(bn);
  return kExitFailure;
}
