#include "bplab/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>

#include "bplab/experiments.hpp"
#include "bplab/io.hpp"
#include "bplab/report.hpp"
#include "bplab/rng.hpp"

namespace bplab {
namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

constexpr std::uint64_t kInputTag = 4;
constexpr std::size_t kStabilityInputs = 4;

const std::vector<std::string> kFilterIds{"delta1", "rect2", "tri3", "bin4", "bin5", "bin6", "bin7"};
const std::vector<std::string> kPadIds{"circular", "zero", "reflect"};

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Options {
  std::uint64_t seed = 0;
  std::string spec;
  std::string filter;
  std::string pad;
  std::optional<std::size_t> layer;
  std::optional<std::size_t> max_shift;
  std::string out;
  std::optional<std::size_t> epochs;
  std::string augment = "off";
  std::string checkpoint;
  std::vector<std::string> inputs;
};

std::string format_sequence(const std::vector<double>& v) {
  std::ostringstream os;
  os << std::setprecision(17) << '[';
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  os << ']';
  return os.str();
}

// Collects the files a command writes and records them in manifest.json.
class Artifacts {
 public:
  Artifacts(std::string command, const std::string& dir) : command_(std::move(command)), dir_(dir) {}

  bool enabled() const { return !dir_.empty(); }
  std::string path(const std::string& name) const { return (fs::path(dir_) / name).string(); }

  void write(const std::string& name, const std::string& bytes) {
    io::write_file_atomic(path(name), bytes);
    hashes_[name] = io::sha256_hex(bytes);
  }

  /// The hash covers the report without its timestamp.
  void write_report(const std::string& name, MetricReport report) {
    report.timestamp = utc_timestamp();
    io::write_file_atomic(path(name), report.to_json(true).dump(2) + "\n");
    hashes_[name] = io::sha256_hex(report.to_json(false).dump(2) + "\n");
  }

  /// Records a file written by someone else.
  void record(const std::string& name) { hashes_[name] = io::sha256_hex(io::read_file(path(name))); }

  void finish(const json& flags, const json& seeds) const {
    json manifest{{"command", command_},
                  {"flags", flags},
                  {"seeds", seeds},
                  {"git_describe", BPLAB_GIT_DESCRIBE},
                  {"outputs", hashes_}};
    io::write_file_atomic(path("manifest.json"), manifest.dump(2) + "\n");
  }

 private:
  std::string command_;
  std::string dir_;
  std::map<std::string, std::string> hashes_;
};

NetworkSpec resolve_spec(const Options& o) {
  if (o.spec.empty()) throw UsageError("--spec is required");
  std::string path = o.spec;
  if (!fs::exists(path) && fs::exists(fs::path(BPLAB_SPEC_DIR) / path)) path = (fs::path(BPLAB_SPEC_DIR) / path).string();
  NetworkSpec spec;
  try {
    spec = load_spec(path);
  } catch (const std::exception& e) {
    throw UsageError("--spec: " + std::string(e.what()));
  }
  if (!o.pad.empty()) {
    const PaddingMode pad = padding_from_string(o.pad);
    for (auto& l : spec.layers) l.pad = pad;
  }
  return spec;
}

Network with_params_from(const Network& source, const NetworkSpec& spec) {
  Network net = build(spec);
  for (std::size_t i = 0; i < net.num_layers(); ++i) {
    auto src = source.layer(i).params();
    auto& dst = net.mutable_layer(i).mutable_params();
    for (std::size_t p = 0; p < dst.size(); ++p) dst[p] = src[p];
  }
  return net;
}

Network load_weights(const Options& o, const NetworkSpec& spec) {
  const Network net = [&] {
    try {
      return load_checkpoint(o.checkpoint);
    } catch (const std::exception& e) {
      throw UsageError("--checkpoint: " + std::string(e.what()));
    }
  }();
  NetworkSpec expected = net.spec();
  for (std::size_t i = 0; i < expected.layers.size() && i < spec.layers.size(); ++i)
    expected.layers[i].pad = spec.layers[i].pad;
  expected.name = spec.name;
  if (spec_hash(expected) != spec_hash(spec)) {
    throw UsageError("--checkpoint: weights were trained for a different network than --spec");
  }
  return with_params_from(net, spec);
}

ToyProtocol protocol_for(const Options& o) {
  ToyProtocol p;
  if (o.epochs) p.train.epochs = *o.epochs;
  p.train.augment = o.augment == "on";
  if (p.train.augment) p.train.max_shift = o.max_shift.value_or(p.train.max_shift);
  return p;
}

json protocol_json(const ToyProtocol& p) {
  return {{"num_classes", p.num_classes},
          {"train_size", p.train_size},
          {"test_size", p.test_size},
          {"eval_size", p.eval_size},
          {"epochs", p.train.epochs},
          {"batch_size", p.train.batch_size},
          {"learning_rate", p.train.learning_rate},
          {"momentum", p.train.momentum},
          {"augment", p.train.augment},
          {"max_shift", p.train.max_shift}};
}

json common_flags(const Options& o) {
  json f{{"seed", o.seed}, {"spec", o.spec}};
  if (!o.pad.empty()) f["pad"] = o.pad;
  return f;
}

// A trained classifier: loaded from --checkpoint or trained in place.
struct Classifier {
  Network net;
  json source;
};

Classifier classifier(const Options& o, const NetworkSpec& spec, const ToyProtocol& p, const ToySplits& splits) {
  if (!o.checkpoint.empty()) {
    return {load_weights(o, spec), {{"checkpoint", o.checkpoint}}};
  }
  TrainedNet t = train_toy(spec, o.seed, p, splits);
  return {std::move(t.result.net), {{"trained", protocol_json(p)}}};
}

int cmd_toy1d(const Options& o, std::ostream& out) {
  const BlurKernel k = make_kernel(o.filter.empty() ? "tri3" : o.filter);
  const PaddingMode pad = o.pad.empty() ? PaddingMode::Circular : padding_from_string(o.pad);
  const Toy1dResult r = toy1d(k, pad);
  out << "signal " << format_sequence(r.signal) << '\n'
      << "shifted " << format_sequence(r.shifted) << '\n'
      << "maxpool " << format_sequence(r.maxpool) << '\n'
      << "maxpool_shifted " << format_sequence(r.maxpool_shifted) << '\n'
      << "maxblurpool " << format_sequence(r.blurred) << '\n'
      << "maxblurpool_shifted " << format_sequence(r.blurred_shifted) << '\n';
  Artifacts a("toy1d", o.out);
  if (!a.enabled()) return 0;
  MetricReport rep;
  rep.metric = "toy1d";
  rep.config = {{"filter", k.id}, {"pad", to_string(pad)}};
  rep.payload = {{"signal", r.signal},   {"shifted", r.shifted},
                 {"maxpool", r.maxpool}, {"maxpool_shifted", r.maxpool_shifted},
                 {"maxblurpool", r.blurred}, {"maxblurpool_shifted", r.blurred_shifted}};
  a.write_report("toy1d.json", rep);
  a.finish({{"filter", k.id}, {"pad", to_string(pad)}}, json::object());
  return 0;
}

int cmd_kernels(const Options& o, std::ostream& out) {
  std::vector<BlurKernel> kernels = o.filter.empty() ? all_kernels() : std::vector{make_kernel(o.filter)};
  const std::string csv = kernels_csv(kernels);
  out << csv;
  Artifacts a("kernels", o.out);
  if (!a.enabled()) return 0;
  a.write("kernels.csv", csv);
  a.finish({{"filter", o.filter.empty() ? "all" : o.filter}}, json::object());
  return 0;
}

int cmd_heatmap(const Options& o, std::ostream& out) {
  if (o.out.empty()) throw UsageError("--out is required");
  const NetworkSpec spec = resolve_spec(o);
  const Network net = o.checkpoint.empty() ? init_params(build(spec), o.seed) : load_weights(o, spec);
  const std::uint64_t input_seed = derive_seed(o.seed, kInputTag);
  const Tensor x = generic_input(input_seed, spec.input_shape);

  std::vector<std::size_t> layers;
  if (o.layer) {
    if (*o.layer >= net.num_feature_layers()) {
      throw UsageError("--layer: index " + std::to_string(*o.layer) + " out of range (network has " +
                       std::to_string(net.num_feature_layers()) + " feature layers)");
    }
    layers.push_back(*o.layer);
  } else {
    for (std::size_t i = 0; i < net.num_feature_layers(); ++i) layers.push_back(i);
  }

  Artifacts a("heatmap", o.out);
  json summaries = json::array();
  for (std::size_t layer : layers) {
    const EquivarianceMap map = equivariance_heatmap(net, x, layer);
    const HeatmapSummary s = summarize_heatmap(map);
    const std::string stem = "heatmap_layer" + std::to_string(layer);
    a.write(stem + ".csv", heatmap_csv(map));
    a.write(stem + ".pgm", heatmap_pgm(map));
    a.write(stem + ".json", heatmap_sidecar(map).dump(2) + "\n");
    summaries.push_back({{"layer_index", layer},
                         {"layer", map.layer_name},
                         {"cumulative_stride", map.cumulative_stride},
                         {"period", map.period},
                         {"periodic_max", s.periodic_max},
                         {"even_max", s.even_max},
                         {"odd_mean", s.odd_mean},
                         {"mean", s.mean}});
    out << stem << " " << map.layer_name << " period " << map.period << " odd_mean " << s.odd_mean << '\n';
  }
  const json seeds{{"init", o.seed}, {"input", input_seed}};
  MetricReport rep;
  rep.metric = "heatmap";
  rep.config = {{"spec", spec_to_json(spec)}, {"spec_hash", spec_hash(spec)}, {"checkpoint", o.checkpoint}};
  rep.payload = {{"layers", summaries}};
  rep.seeds = seeds;
  a.write_report("heatmap.json", rep);
  json flags = common_flags(o);
  if (o.layer) flags["layer"] = *o.layer;
  if (!o.checkpoint.empty()) flags["checkpoint"] = o.checkpoint;
  flags["out"] = o.out;
  a.finish(flags, seeds);
  return 0;
}

int cmd_train(const Options& o, std::ostream& out) {
  if (o.out.empty()) throw UsageError("--out is required");
  const NetworkSpec spec = resolve_spec(o);
  const ToyProtocol p = protocol_for(o);
  const ToySplits splits = toy_splits(o.seed, p);
  const TrainedNet t = train_toy(spec, o.seed, p, splits);

  Artifacts a("train", o.out);
  save_checkpoint(t.result.net, a.path("model.bin"));
  a.record("model.bin");
  a.record("model.bin.json");
  a.write("train_log.csv", log_to_csv(t.result.log));
  MetricReport rep;
  rep.metric = "train";
  rep.config = {{"spec", spec_to_json(spec)}, {"spec_hash", spec_hash(spec)}, {"protocol", protocol_json(p)}};
  rep.payload = {{"train_accuracy", t.train_accuracy},
                 {"test_accuracy", t.test_accuracy},
                 {"final_loss", t.result.log.back().loss},
                 {"parameter_count", t.result.net.parameter_count()},
                 {"checksum", t.result.net.checksum()}};
  rep.seeds = derived_seeds(o.seed);
  a.write_report("train.json", rep);
  json flags = common_flags(o);
  flags["epochs"] = p.train.epochs;
  flags["augment"] = o.augment;
  if (p.train.augment) flags["max_shift"] = p.train.max_shift;
  flags["out"] = o.out;
  a.finish(flags, rep.seeds);
  out << "train_accuracy " << t.train_accuracy << "\ntest_accuracy " << t.test_accuracy << '\n';
  return 0;
}

// Shared body of `consistency` and `adversarial`.
int cmd_shift_metric(const Options& o, std::ostream& out, const std::string& metric) {
  if (o.out.empty()) throw UsageError("--out is required");
  const NetworkSpec spec = resolve_spec(o);
  const std::size_t H = spec.input_shape.at(1), W = spec.input_shape.at(2);
  const std::size_t max_shift = metric == "adversarial" ? o.max_shift.value_or(std::min(H, W) / 2) : 0;
  if (max_shift > std::min(H, W) / 2) {
    throw UsageError("--max-shift: window wider than the input (limit " + std::to_string(std::min(H, W) / 2) + ")");
  }
  const ToyProtocol p = protocol_for(o);
  const ToySplits splits = toy_splits(o.seed, p);
  const Classifier c = classifier(o, spec, p, splits);
  const ShiftStats s = shift_stats(c.net, splits.eval, max_shift);

  MetricReport rep;
  rep.metric = metric;
  rep.config = {{"spec", spec_to_json(spec)},
                {"spec_hash", spec_hash(spec)},
                {"weights", c.source},
                {"eval_size", p.eval_size},
                {"shifts", "exhaustive"}};
  if (metric == "consistency") {
    rep.payload = {{"consistency", s.consistency},
                   {"test_accuracy", accuracy(c.net, splits.test)},
                   {"eval_images", splits.eval.size()},
                   {"shifts_per_image", H * W}};
    out << "consistency " << std::setprecision(17) << s.consistency << '\n';
  } else {
    json curve = json::array();
    bool monotone = true;
    for (std::size_t m = 0; m < s.adversarial.size(); ++m) {
      curve.push_back({{"max_shift", m},
                       {"accuracy", s.adversarial[m].accuracy},
                       {"positions_per_sample", s.adversarial[m].positions_per_sample}});
      if (m > 0 && s.adversarial[m].accuracy > s.adversarial[m - 1].accuracy) monotone = false;
      out << "max_shift " << m << " accuracy " << s.adversarial[m].accuracy << '\n';
    }
    rep.payload = {{"curve", curve}, {"monotone", monotone}, {"eval_images", splits.eval.size()}};
    rep.config["max_shift"] = max_shift;
  }
  rep.seeds = derived_seeds(o.seed);
  Artifacts a(metric, o.out);
  a.write_report(metric + ".json", rep);
  json flags = common_flags(o);
  if (!o.checkpoint.empty()) flags["checkpoint"] = o.checkpoint;
  if (o.checkpoint.empty()) {
    flags["epochs"] = p.train.epochs;
    flags["augment"] = o.augment;
  }
  if (metric == "adversarial") flags["max_shift"] = max_shift;
  flags["out"] = o.out;
  a.finish(flags, rep.seeds);
  return 0;
}

int cmd_psnr(const Options& o, std::ostream& out) {
  if (o.out.empty()) throw UsageError("--out is required");
  const std::string filter = o.filter.empty() ? "tri3" : o.filter;
  NetworkSpec spec = encoder_decoder_spec(filter);
  if (!o.pad.empty()) {
    for (auto& l : spec.layers) l.pad = padding_from_string(o.pad);
  }
  const Network net = init_params(build(spec), o.seed);
  const std::uint64_t input_seed = derive_seed(o.seed, kInputTag);
  const StabilityResult r = encoder_decoder_stability(net, stability_inputs(input_seed, kStabilityInputs));

  MetricReport rep;
  rep.metric = "psnr";
  rep.config = {{"spec", spec_to_json(spec)}, {"spec_hash", spec_hash(spec)}, {"inputs", kStabilityInputs},
                {"shifts", "all horizontal"}};
  rep.payload = {{"psnr_stability", r.psnr_stability}, {"image_tv", r.image_tv}};
  rep.seeds = {{"init", o.seed}, {"input", input_seed}};
  Artifacts a("psnr", o.out);
  a.write_report("psnr.json", rep);
  json flags{{"seed", o.seed}, {"filter", filter}, {"out", o.out}};
  if (!o.pad.empty()) flags["pad"] = o.pad;
  a.finish(flags, rep.seeds);
  out << std::setprecision(17) << "psnr_stability " << r.psnr_stability << "\nimage_tv " << r.image_tv << '\n';
  return 0;
}

void flatten_payload(const json& j, const std::string& prefix, std::vector<std::pair<std::string, json>>& rows) {
  if (j.is_object()) {
    for (const auto& [k, v] : j.items()) flatten_payload(v, prefix.empty() ? k : prefix + "." + k, rows);
  } else if (j.is_array()) {
    for (std::size_t i = 0; i < j.size(); ++i) flatten_payload(j[i], prefix + "." + std::to_string(i), rows);
  } else if (j.is_number() || j.is_boolean()) {
    rows.emplace_back(prefix, j);
  }
}

int cmd_report(const Options& o, std::ostream& out) {
  if (o.inputs.empty()) throw UsageError("report needs at least one metric JSON input");
  std::ostringstream csv;
  csv << std::setprecision(17) << "source,metric,config_hash,key,value\n";
  json hashes = json::object();
  for (const auto& path : o.inputs) {
    MetricReport r;
    try {
      r = MetricReport::from_json(json::parse(io::read_file(path)));
    } catch (const std::exception& e) {
      throw UsageError(path + ": " + e.what());
    }
    std::vector<std::pair<std::string, json>> rows;
    flatten_payload(r.payload, "", rows);
    const std::string source = fs::path(path).parent_path().filename().string() + "/" +
                               fs::path(path).filename().string();
    for (const auto& [key, value] : rows) {
      csv << source << ',' << r.metric << ',' << r.config_hash() << ',' << key << ',';
      if (value.is_boolean()) {
        csv << (value.get<bool>() ? 1 : 0);
      } else if (value.is_number_integer() || value.is_number_unsigned()) {
        csv << value.dump();
      } else {
        csv << value.get<double>();
      }
      csv << '\n';
    }
  }
  out << csv.str();
  Artifacts a("report", o.out);
  if (!a.enabled()) return 0;
  a.write("report.csv", csv.str());
  a.finish({{"inputs", o.inputs}, {"out", o.out}}, json::object());
  return 0;
}

json error_line(const std::string& kind, const std::string& message) {
  return {{"error", kind}, {"message", message}};
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Anti-aliased pooling and shift-equivariance experiments", "bplab"};
  app.require_subcommand(1);

  auto seed = [&](CLI::App* c) { c->add_option("--seed", o.seed, "Run seed"); };
  auto spec = [&](CLI::App* c) { c->add_option("--spec", o.spec, "Network spec JSON (path or bundled name)"); };
  auto filter = [&](CLI::App* c) {
    c->add_option("--filter", o.filter, "Blur filter")->check(CLI::IsMember(kFilterIds));
  };
  auto pad = [&](CLI::App* c) {
    c->add_option("--pad", o.pad, "Padding override for every layer")->check(CLI::IsMember(kPadIds));
  };
  auto outdir = [&](CLI::App* c) { c->add_option("--out", o.out, "Output directory"); };
  auto training = [&](CLI::App* c) {
    c->add_option("--epochs", o.epochs, "Training epochs")->check(CLI::PositiveNumber);
    c->add_option("--augment", o.augment, "Random circular shift augmentation")->check(CLI::IsMember({"on", "off"}));
  };
  auto checkpoint = [&](CLI::App* c) { c->add_option("--checkpoint", o.checkpoint, "Trained weights"); };

  auto* toy = app.add_subcommand("toy1d", "Reproduce the 1-D max-pooling example");
  filter(toy);
  pad(toy);
  outdir(toy);

  auto* kern = app.add_subcommand("kernels", "Print blur filter tables as CSV");
  filter(kern);
  outdir(kern);

  auto* heat = app.add_subcommand("heatmap", "Per-layer equivariance heatmaps");
  seed(heat);
  spec(heat);
  pad(heat);
  heat->add_option("--layer", o.layer, "Feature layer index (all when omitted)");
  checkpoint(heat);
  outdir(heat);

  auto* tr = app.add_subcommand("train", "Fit a toy classifier");
  seed(tr);
  spec(tr);
  pad(tr);
  training(tr);
  tr->add_option("--max-shift", o.max_shift, "Augmentation shift range");
  outdir(tr);

  auto* cons = app.add_subcommand("consistency", "Exhaustive classification consistency");
  seed(cons);
  spec(cons);
  pad(cons);
  training(cons);
  checkpoint(cons);
  outdir(cons);

  auto* adv = app.add_subcommand("adversarial", "Accuracy under worst-case circular shifts");
  seed(adv);
  spec(adv);
  pad(adv);
  training(adv);
  checkpoint(adv);
  adv->add_option("--max-shift", o.max_shift, "Largest shift window radius");
  outdir(adv);

  auto* ps = app.add_subcommand("psnr", "Encoder-decoder shift stability");
  seed(ps);
  filter(ps);
  pad(ps);
  outdir(ps);

  auto* rep = app.add_subcommand("report", "Aggregate metric JSON into a CSV table");
  rep->add_option("inputs", o.inputs, "Metric report JSON files");
  outdir(rep);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << error_line("usage", e.what()).dump() << '\n';
    return 2;
  }

  try {
    if (toy->parsed()) return cmd_toy1d(o, out);
    if (kern->parsed()) return cmd_kernels(o, out);
    if (heat->parsed()) return cmd_heatmap(o, out);
    if (tr->parsed()) return cmd_train(o, out);
    if (cons->parsed()) return cmd_shift_metric(o, out, "consistency");
    if (adv->parsed()) return cmd_shift_metric(o, out, "adversarial");
    if (ps->parsed()) return cmd_psnr(o, out);
    if (rep->parsed()) return cmd_report(o, out);
  } catch (const UsageError& e) {
    err << error_line("usage", e.what()).dump() << '\n';
    return 2;
  } catch (const TrainingDiverged& e) {
    err << error_line("diverged", e.what()).dump() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << error_line("runtime", e.what()).dump() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace bplab
