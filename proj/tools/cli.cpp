#include "cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <random>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "ddf2pol/errors.hpp"
#include "ddf2pol/evaluation.hpp"
#include "ddf2pol/synth.hpp"

namespace ddf2pol::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr std::uint64_t kPublishedFlops = 7606272;
constexpr std::uint64_t kPublishedMacs = 2045952;
constexpr std::size_t kPublishedParameters = 91371;

/// Flags that override manifest values.
struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> patch;
  std::optional<double> fraction;
  std::optional<std::size_t> classes;
  std::optional<double> lr;
  std::optional<std::size_t> batch;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> patience;
  std::optional<std::string> out;

  void attach(CLI::App& app) {
    app.add_option("--seed", seed, "Seed for split, initialization and shuffling (default 1)");
    app.add_option("--patch", patch, "Odd patch size (default 15)");
    app.add_option("--fraction", fraction, "Labeled fraction drawn for training (default 0.01)");
    app.add_option("--classes", classes, "Number of classes (default: largest label id)");
    app.add_option("--lr", lr, "Adam learning rate (default 1e-3)");
    app.add_option("--batch", batch, "Mini-batch size (default 128)");
    app.add_option("--epochs", epochs, "Maximum epochs (default 100)");
    app.add_option("--patience", patience, "Early-stopping patience in epochs (default 10)");
    app.add_option("--out", out, "Output directory");
  }

  void apply(Manifest& m) const {
    if (seed) m.seed = *seed;
    if (patch) m.patch = *patch;
    if (fraction) m.fraction = *fraction;
    if (classes) m.classes = *classes;
    if (lr) m.train.learning_rate = *lr;
    if (batch) m.train.batch_size = *batch;
    if (epochs) m.train.max_epochs = *epochs;
    if (patience) m.train.patience = *patience;
    if (out) m.out = *out;
  }
};

struct Scene {
  CoherencyRaster raster;
  LabelMap labels;
  DescriptorStack descriptors;
};

Scene load_scene(Manifest& m, std::ostream& out) {
  if (m.raster.empty()) throw UsageError("manifest names no raster");
  if (m.labels.empty()) throw UsageError("manifest names no label map");
  if (!fs::exists(m.raster)) throw IoError("raster not found: " + m.raster.string());
  if (!fs::exists(m.labels)) throw IoError("label map not found: " + m.labels.string());
  Scene s;
  s.raster = load_coherency(m.raster);
  s.labels = load_labels(m.labels);
  if (s.labels.height != s.raster.height || s.labels.width != s.raster.width) {
    throw DataError("label map " + m.labels.string() + " is " + std::to_string(s.labels.height) +
                    "x" + std::to_string(s.labels.width) + " but raster " + m.raster.string() +
                    " is " + std::to_string(s.raster.height) + "x" +
                    std::to_string(s.raster.width));
  }
  if (!m.classes) {
    const auto top = std::max_element(s.labels.ids.begin(), s.labels.ids.end());
    m.classes = top == s.labels.ids.end() ? 0 : *top;
  }
  if (s.raster.clamped > 0) {
    out << "warning: " << s.raster.clamped << " negative diagonal values clamped to 0\n";
  }
  s.descriptors = compute_descriptors(s.raster);
  if (s.descriptors.degenerate > 0) {
    out << "note: " << s.descriptors.degenerate << " pixels hit a zero-power guard\n";
  }
  return s;
}

ModelConfig model_config(const Manifest& m) {
  ModelConfig c;
  c.patch = m.patch.value_or(15);
  c.num_classes = m.classes.value_or(0);
  c.validate();
  return c;
}

SplitResult split_scene(const Manifest& m, const Scene& s, std::ostream& out) {
  SplitResult split =
      stratified_split(s.labels, *m.classes, m.fraction, derive_seed(m.seed, "split"));
  for (auto k : split.short_classes) {
    out << "warning: class " << k << " has fewer than " << split.per_class
        << " labeled pixels; all used for training\n";
  }
  return split;
}

std::vector<std::size_t> per_class_counts(const LabelMap& labels, std::span<const std::size_t> pixels,
                                          std::size_t classes) {
  std::vector<std::size_t> counts(classes, 0);
  for (auto p : pixels) ++counts.at(labels.ids[p] - 1u);
  return counts;
}

void write_pixels(const fs::path& path, std::span<const std::size_t> pixels) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  for (auto p : pixels) os << p << '\n';
}

ClassPalette palette_for(const Manifest& m, std::size_t classes) {
  if (m.palette.empty()) return ClassPalette::for_classes(classes);
  ClassPalette p;
  for (const auto& hex : m.palette) p.colors.push_back(ClassPalette::parse_hex(hex));
  if (p.colors.size() < classes) {
    throw UsageError("palette has " + std::to_string(p.colors.size()) + " colors for " +
                     std::to_string(classes) + " classes");
  }
  return p;
}

/// Loads a checkpoint and checks it against what the manifest asks for.
Ddf2PolModel load_compatible(const fs::path& checkpoint, Manifest& m) {
  Ddf2PolModel model = Ddf2PolModel::load(checkpoint);
  const ModelConfig& c = model.config();
  if (m.patch && *m.patch != c.patch) {
    throw UsageError("incompatible checkpoint " + checkpoint.string() + ": trained with patch " +
                     std::to_string(c.patch) + ", configured patch " + std::to_string(*m.patch));
  }
  if (m.classes && *m.classes != c.num_classes) {
    throw UsageError("incompatible checkpoint " + checkpoint.string() + ": trained for " +
                     std::to_string(c.num_classes) + " classes, configured " +
                     std::to_string(*m.classes));
  }
  m.patch = c.patch;
  m.classes = c.num_classes;
  return model;
}

fs::path default_checkpoint(const Manifest& m, const std::optional<std::string>& flag) {
  return flag ? fs::path(*flag) : m.out / "checkpoint.bin";
}

// ---- subcommands ----

void cmd_synth(const std::optional<std::string>& spec_path, const Overrides& o,
               const std::optional<std::size_t>& height, const std::optional<std::size_t>& width,
               const std::optional<std::size_t>& looks, const std::optional<std::string>& layout,
               std::ostream& out) {
  SceneSpec spec = spec_path ? SceneSpec::from_json_file(*spec_path) : SceneSpec::three_class_default();
  if (o.seed) spec.seed = *o.seed;
  if (height) spec.height = *height;
  if (width) spec.width = *width;
  if (looks) spec.looks = *looks;
  if (layout) {
    if (*layout == "stripes") {
      spec.layout = SceneLayout::kStripes;
    } else if (*layout == "voronoi") {
      spec.layout = SceneLayout::kVoronoi;
    } else {
      throw UsageError("layout must be stripes or voronoi");
    }
  }
  spec.validate();
  const fs::path dir = o.out.value_or("synth");
  fs::create_directories(dir);

  const SyntheticScene scene = sample_scene(spec);
  write_packed(scene.raster, dir / "scene.t3");
  write_labels_raw(scene.labels, dir / "labels.raw");
  spec.save_json(dir / "spec.json");
  render_pauli(scene.raster, dir / "pauli.png");

  Manifest m;
  m.raster = "scene.t3";
  m.labels = "labels.raw";
  m.classes = spec.class_covariances.size();
  m.out = "run";
  if (o.seed) m.seed = *o.seed;
  m.save(dir / "manifest.json");

  out << "wrote " << spec.height << "x" << spec.width << " scene, " << spec.class_covariances.size()
      << " classes, " << spec.looks << " looks to " << dir.string() << '\n';
}

void cmd_prepare(Manifest m, std::ostream& out) {
  const Scene s = load_scene(m, out);
  const SplitResult split = split_scene(m, s, out);
  const NormalizationStats stats = compute_normalization(s.descriptors, s.raster, split.train);
  fs::create_directories(m.out);
  stats.save(m.out / "norm_stats.txt");
  write_pixels(m.out / "train_pixels.txt", split.train);
  render_pauli(s.raster, m.out / "pauli.png");

  const auto train = per_class_counts(s.labels, split.train, *m.classes);
  const auto test = per_class_counts(s.labels, split.test, *m.classes);
  out << "class train test\n";
  for (std::size_t k = 0; k < *m.classes; ++k) {
    out << k + 1 << ' ' << train[k] << ' ' << test[k] << '\n';
  }
  out << "per-class training draw " << split.per_class << '\n';
}

void cmd_train(Manifest m, bool dry_run, bool have_manifest, std::ostream& out) {
  if (dry_run) {
    if (!m.classes) {
      if (!have_manifest) throw UsageError("--dry-run needs --classes or a manifest");
      if (!fs::exists(m.labels)) throw IoError("label map not found: " + m.labels.string());
      const LabelMap labels = load_labels(m.labels);
      const auto top = std::max_element(labels.ids.begin(), labels.ids.end());
      m.classes = top == labels.ids.end() ? 0 : *top;
    }
    out << format_parameter_ledger(count_parameters(model_config(m)));
    return;
  }
  if (!have_manifest) throw UsageError("train needs a manifest (or --dry-run)");
  m.train.validate();
  const Scene s = load_scene(m, out);
  const ModelConfig config = model_config(m);
  const SplitResult split = split_scene(m, s, out);
  const PatchDataset train_set =
      PatchDataset::build(s.descriptors, s.raster, &s.labels, split.train, config.patch);

  out << "training on " << split.train.size() << " pixels (" << split.per_class
      << " per class), patch " << config.patch << ", " << config.num_classes << " classes\n";
  Ddf2PolModel model = Ddf2PolModel::initialize(config, derive_seed(m.seed, "init"));
  TrainConfig tc = m.train;
  tc.seed = derive_seed(m.seed, "train");
  const TrainResult result = train(model, train_set, tc, [&](const EpochRecord& r) {
    out << "epoch " << std::setw(3) << r.epoch << "  loss " << std::fixed << std::setprecision(6)
        << r.loss << "  accuracy " << std::setprecision(4) << r.accuracy << (r.best ? "  *" : "")
        << '\n'
        << std::defaultfloat << std::flush;
  });

  fs::create_directories(m.out);
  model.save(m.out / "checkpoint.bin");
  train_set.stats().save(m.out / "norm_stats.txt");
  write_pixels(m.out / "train_pixels.txt", split.train);
  {
    std::ofstream hist(m.out / "history.txt");
    if (!hist) throw IoError("cannot write " + (m.out / "history.txt").string());
    write_history(result.history, hist);
  }
  const auto pred = classify_pixels(model, train_set);
  const Metrics fit = compute_metrics(confusion(train_set, pred, config.num_classes));
  out << "best epoch " << result.best_epoch << " of " << result.history.size()
      << ", training accuracy " << std::fixed << std::setprecision(4) << fit.overall
      << std::defaultfloat << '\n'
      << "wrote " << (m.out / "checkpoint.bin").string() << '\n';
}

void cmd_eval(Manifest m, const std::optional<std::string>& checkpoint,
              const std::optional<std::string>& stats_path, const std::string& which,
              std::ostream& out) {
  const fs::path ckpt = default_checkpoint(m, checkpoint);
  Ddf2PolModel model = load_compatible(ckpt, m);
  const Scene s = load_scene(m, out);
  const SplitResult split = split_scene(m, s, out);
  const NormalizationStats stats =
      NormalizationStats::load(stats_path ? fs::path(*stats_path) : ckpt.parent_path() / "norm_stats.txt");

  std::vector<std::size_t> pixels;
  if (which == "test") {
    pixels = split.test;
  } else if (which == "train") {
    pixels = split.train;
  } else {
    pixels = split.train;
    pixels.insert(pixels.end(), split.test.begin(), split.test.end());
    std::sort(pixels.begin(), pixels.end());
  }
  const PatchDataset ds =
      PatchDataset::build(s.descriptors, s.raster, &s.labels, pixels, model.config().patch, &stats);
  const auto pred = classify_pixels(model, ds);
  const Metrics metrics = compute_metrics(confusion(ds, pred, *m.classes));

  const auto train = per_class_counts(s.labels, split.train, *m.classes);
  const auto test = per_class_counts(s.labels, split.test, *m.classes);
  fs::create_directories(m.out);
  {
    std::ofstream table(m.out / "metrics.txt");
    if (!table) throw IoError("cannot write " + (m.out / "metrics.txt").string());
    write_metrics_table(metrics, train, test, m.class_names, table);
    std::ofstream kv(m.out / "metrics.kv");
    write_metrics_kv(metrics, kv);
  }
  out << "evaluated " << pixels.size() << ' ' << which << " pixels\n";
  write_metrics_table(metrics, train, test, m.class_names, out);
}

void cmd_map(Manifest m, const std::optional<std::string>& checkpoint,
             const std::optional<std::string>& stats_path, std::ostream& out) {
  const fs::path ckpt = default_checkpoint(m, checkpoint);
  Ddf2PolModel model = load_compatible(ckpt, m);
  if (!fs::exists(m.raster)) throw IoError("raster not found: " + m.raster.string());
  const CoherencyRaster raster = load_coherency(m.raster);
  const NormalizationStats stats =
      NormalizationStats::load(stats_path ? fs::path(*stats_path) : ckpt.parent_path() / "norm_stats.txt");
  const PatchDataset ds = PatchDataset::build(compute_descriptors(raster), raster, nullptr, {},
                                              model.config().patch, &stats);
  const LabelMap map = classify_scene(model, ds);
  fs::create_directories(m.out);
  write_map(map, palette_for(m, *m.classes), m.out / "map.png");
  out << "wrote " << map.height << "x" << map.width << " map to " << (m.out / "map.png").string()
      << '\n';
}

void cmd_complexity(const Overrides& o, std::ostream& out) {
  ModelConfig c;
  c.patch = o.patch.value_or(15);
  c.num_classes = o.classes.value_or(15);
  c.validate();
  const ParameterLedger params = count_parameters(c);
  const ComplexityLedger ops = count_flops_macs(c);
  out << "patch " << c.patch << ", classes " << c.num_classes << '\n'
      << format_parameter_ledger(params) << "macs " << ops.macs << '\n'
      << "flops " << ops.flops << '\n'
      << "published: parameters " << kPublishedParameters << ", flops " << kPublishedFlops << ", macs "
      << kPublishedMacs << '\n'
      << "convention: macs = output elements x kernel taps x input channels over every\n"
      << "convolution and dense map, a complex convolution costing four real ones;\n"
      << "flops = 2 x macs + one per element for bias, activation, normalization,\n"
      << "pooling and gating. The published operation counts come from an unstated\n"
      << "tool and are not expected to match.\n";
}

}  // namespace

Manifest Manifest::load(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read manifest " + path.string());
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw FormatError("manifest " + path.string() + " is not valid JSON: " + e.what());
  }
  const fs::path base = path.parent_path();
  auto resolve = [&](const std::string& p) {
    const fs::path q(p);
    return q.is_absolute() ? q : base / q;
  };
  Manifest m;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "raster") m.raster = resolve(value.get<std::string>());
      else if (key == "labels") m.labels = resolve(value.get<std::string>());
      else if (key == "out") m.out = resolve(value.get<std::string>());
      else if (key == "classes") m.classes = value.get<std::size_t>();
      else if (key == "patch") m.patch = value.get<std::size_t>();
      else if (key == "fraction") m.fraction = value.get<double>();
      else if (key == "seed") m.seed = value.get<std::uint64_t>();
      else if (key == "learning_rate") m.train.learning_rate = value.get<double>();
      else if (key == "batch_size") m.train.batch_size = value.get<std::size_t>();
      else if (key == "epochs") m.train.max_epochs = value.get<std::size_t>();
      else if (key == "patience") m.train.patience = value.get<std::size_t>();
      else if (key == "class_names") m.class_names = value.get<std::vector<std::string>>();
      else if (key == "palette") m.palette = value.get<std::vector<std::string>>();
      else throw UsageError("unknown manifest key '" + key + "' in " + path.string());
    }
  } catch (const json::exception& e) {
    throw FormatError("manifest " + path.string() + ": " + e.what());
  }
  return m;
}

void Manifest::save(const fs::path& path) const {
  json j;
  j["raster"] = raster.string();
  j["labels"] = labels.string();
  j["out"] = out.string();
  if (classes) j["classes"] = *classes;
  if (patch) j["patch"] = *patch;
  j["fraction"] = fraction;
  j["seed"] = seed;
  j["learning_rate"] = train.learning_rate;
  j["batch_size"] = train.batch_size;
  j["epochs"] = train.max_epochs;
  j["patience"] = train.patience;
  if (!class_names.empty()) j["class_names"] = class_names;
  if (!palette.empty()) j["palette"] = palette;
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

std::uint64_t derive_seed(std::uint64_t seed, const std::string& purpose) {
  std::vector<std::uint32_t> words{static_cast<std::uint32_t>(seed),
                                   static_cast<std::uint32_t>(seed >> 32)};
  for (char c : purpose) words.push_back(static_cast<unsigned char>(c));
  std::seed_seq seq(words.begin(), words.end());
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
#ifdef __GLIBC__
  // Training allocates and frees multi-megabyte buffers every step; keep them
  // on the heap instead of mapping and faulting fresh pages each time.
  mallopt(M_MMAP_THRESHOLD, 512 << 20);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  CLI::App app{"Dual-stream real/complex CNN for PolSAR pixel classification"};
  app.require_subcommand(1);
  Overrides o;

  std::optional<std::string> spec_path, layout, checkpoint, stats;
  std::optional<std::size_t> height, width, looks;
  std::string manifest_path;
  std::string which = "test";
  bool dry_run = false;

  auto* synth = app.add_subcommand("synth", "Sample a synthetic scene and write a manifest for it");
  synth->add_option("--spec", spec_path, "Scene spec JSON (default: three-class scene)");
  synth->add_option("--height", height, "Scene height");
  synth->add_option("--width", width, "Scene width");
  synth->add_option("--looks", looks, "Looks per pixel");
  synth->add_option("--layout", layout, "stripes or voronoi");
  o.attach(*synth);

  auto* prepare = app.add_subcommand("prepare", "Split labels and write normalization statistics");
  prepare->add_option("manifest", manifest_path, "Run manifest")->required();
  o.attach(*prepare);

  auto* train_cmd = app.add_subcommand("train", "Train and write checkpoint, history and statistics");
  train_cmd->add_option("manifest", manifest_path, "Run manifest");
  train_cmd->add_flag("--dry-run", dry_run, "Print the parameter ledger and exit");
  o.attach(*train_cmd);

  auto* eval = app.add_subcommand("eval", "Accuracy metrics of a checkpoint");
  eval->add_option("manifest", manifest_path, "Run manifest")->required();
  eval->add_option("--checkpoint", checkpoint, "Checkpoint (default <out>/checkpoint.bin)");
  eval->add_option("--stats", stats, "Normalization statistics (default: beside the checkpoint)");
  eval->add_option("--pixels", which, "test, train or labeled")
      ->check(CLI::IsMember({"test", "train", "labeled"}));
  o.attach(*eval);

  auto* map = app.add_subcommand("map", "Classify every pixel and render a PNG map");
  map->add_option("manifest", manifest_path, "Run manifest")->required();
  map->add_option("--checkpoint", checkpoint, "Checkpoint (default <out>/checkpoint.bin)");
  map->add_option("--stats", stats, "Normalization statistics (default: beside the checkpoint)");
  o.attach(*map);

  auto* complexity = app.add_subcommand("complexity", "Parameter, FLOP and MAC counts");
  complexity->add_option("--patch", o.patch, "Odd patch size (default 15)");
  complexity->add_option("--classes", o.classes, "Number of classes (default 15)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    Manifest m;
    const bool have_manifest = !manifest_path.empty();
    if (have_manifest) m = Manifest::load(manifest_path);
    o.apply(m);
    if (*synth) {
      cmd_synth(spec_path, o, height, width, looks, layout, out);
    } else if (*prepare) {
      cmd_prepare(m, out);
    } else if (*train_cmd) {
      cmd_train(m, dry_run, have_manifest, out);
    } else if (*eval) {
      cmd_eval(m, checkpoint, stats, which, out);
    } else if (*map) {
      cmd_map(m, checkpoint, stats, out);
    } else {
      cmd_complexity(o, out);
    }
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace ddf2pol::cli
