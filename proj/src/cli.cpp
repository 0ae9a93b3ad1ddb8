#include "puzzlegan/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "puzzlegan/dataio.hpp"
#include "puzzlegan/errors.hpp"
#include "puzzlegan/imaging.hpp"
#include "puzzlegan/influence.hpp"
#include "puzzlegan/layout.hpp"
#include "puzzlegan/metrics.hpp"
#include "puzzlegan/model.hpp"
#include "puzzlegan/runtime.hpp"
#include "puzzlegan/training.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace puzzlegan::cli {

namespace {

struct Io {
  std::ostream& out;
  std::ostream& err;
};

// Allowed top-level keys per command (besides "command" itself).
const std::map<std::string, std::set<std::string>>& command_keys() {
  static const std::map<std::string, std::set<std::string>> keys{
      {"synth-faces", {"out", "n", "resolution", "seed"}},
      {"ingest", {"out", "data", "resolution", "alignment_note", "seed"}},
      {"train", {"out", "layout", "dataset", "model", "prior", "train", "seed"}},
      {"sample", {"out", "checkpoint", "n", "seed", "columns"}},
      {"swap", {"out", "checkpoint", "target_seed", "reference_seed", "parts", "rows"}},
      {"influence", {"out", "checkpoint", "layout", "model"}},
      {"eval-regions", {"out", "checkpoint", "part", "n", "seed", "batch_size"}},
      {"fid", {"out", "checkpoint", "store", "extractor", "n", "seed"}},
  };
  return keys;
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError("config " + path + " is not valid JSON: " + e.what());
  }
}

void check_keys(const std::string& command, const json& cfg) {
  if (!cfg.is_object()) throw ValidationError("config for '" + command + "' must be a JSON object");
  const auto& allowed = command_keys().at(command);
  for (const auto& [key, value] : cfg.items()) {
    if (key == "command") {
      if (value != command) throw ValidationError("config is for command '" + value.dump() + "', not '" + command + "'");
      continue;
    }
    if (!allowed.contains(key)) throw ValidationError("unknown config key '" + key + "' for command '" + command + "'");
  }
}

template <typename T>
T value_or(const json& cfg, const char* key, T fallback) {
  if (!cfg.contains(key)) return fallback;
  try {
    return cfg.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config key '") + key + "': " + e.what());
  }
}

std::string required_string(const json& cfg, const char* key) {
  if (!cfg.contains(key)) throw ValidationError(std::string("missing required setting '") + key + "'");
  return value_or<std::string>(cfg, key, "");
}

PartLayout load_layout(const std::string& ref) {
  PartLayout layout = (ref == "face_swap" || ref == "facial_parts") ? canonical_layout(ref) : read_layout_file(ref);
  const auto report = validate_layout(layout);
  if (!report.ok()) {
    std::string msg = "layout " + ref + " is invalid:";
    for (const auto& v : report.violations) msg += "\n  " + v.message;
    throw ValidationError(msg);
  }
  return layout;
}

std::vector<int> parse_parts(const json& value) {
  std::vector<int> parts;
  if (value.is_array()) {
    for (const auto& v : value) parts.push_back(v.get<int>());
  } else if (value.is_string()) {
    std::stringstream ss(value.get<std::string>());
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      if (tok.empty()) continue;
      try {
        std::size_t used = 0;
        parts.push_back(std::stoi(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw ValidationError("bad part id '" + tok + "' in --parts");
      }
    }
  } else if (!value.is_null()) {
    throw ValidationError("parts must be a list of part ids");
  }
  std::sort(parts.begin(), parts.end());
  parts.erase(std::unique(parts.begin(), parts.end()), parts.end());
  return parts;
}

fs::path prepare_out(const json& cfg, const std::string& command) {
  const fs::path out = required_string(cfg, "out");
  fs::create_directories(out);
  json snapshot = cfg;
  snapshot["command"] = command;
  std::ofstream f(out / "resolved_config.json");
  if (!f) throw ValidationError("cannot write to output directory " + out.string());
  f << snapshot.dump(2) << "\n";
  return out;
}

void write_raw(const fs::path& path, const torch::Tensor& t) {
  const auto data = t.detach().to(torch::kFloat32).contiguous();
  std::ofstream f(path, std::ios::binary);
  f.write(reinterpret_cast<const char*>(data.data_ptr<float>()), static_cast<std::streamsize>(data.numel() * sizeof(float)));
}

void write_raw(const fs::path& path, const std::vector<double>& values) {
  std::ofstream f(path, std::ios::binary);
  f.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)));
}

json stats_json(const std::optional<SummaryStats>& s) {
  if (!s) return nullptr;
  return {{"count", s->count}, {"mean", s->mean},     {"min", s->min}, {"q1", s->q1},
          {"median", s->median}, {"q3", s->q3}, {"max", s->max}};
}

// Strict decrease over the regions that have pixels.
bool ordered(const RegionStats& s) {
  std::vector<double> medians;
  for (const auto* r : {&s.inside, &s.interlocking, &s.outside})
    if (*r) medians.push_back((*r)->median);
  for (std::size_t i = 1; i < medians.size(); ++i)
    if (!(medians[i - 1] > medians[i])) return false;
  return true;
}

// ---------------------------------------------------------------------------

int cmd_layout_check(const std::string& path, Io io) {
  PartLayout layout;
  try {
    layout = (path == "face_swap" || path == "facial_parts") ? canonical_layout(path) : read_layout_file(path);
  } catch (const ValidationError& e) {
    io.err << "error: " << e.what() << "\n";
    return kExitValidation;
  }
  io.out << render_layout(layout);
  const auto report = validate_layout(layout);
  if (!report.ok()) {
    for (const auto& v : report.violations) io.err << "violation: " << v.message << "\n";
    return kExitValidation;
  }
  io.out << "ok: " << layout.grid_height() << "x" << layout.grid_width() << " grid, " << layout.num_parts()
         << " parts\n";
  for (PartId p = 1; p <= layout.num_parts(); ++p) {
    io.out << "  part " << p << " (" << layout.part_name(p) << "): " << part_cells(layout, p).size() << " cells\n";
  }
  return kExitOk;
}

int cmd_synth_faces(const json& cfg, Io io) {
  const auto out = prepare_out(cfg, "synth-faces");
  const auto n = value_or<std::int64_t>(cfg, "n", 2000);
  const auto res = value_or<int>(cfg, "resolution", 64);
  write_synthetic_faces((out / "images").string(), n, res, value_or<std::uint64_t>(cfg, "seed", 0));
  io.out << "wrote " << n << " synthetic faces to " << (out / "images").string() << "\n";
  return kExitOk;
}

int cmd_ingest(const json& cfg, Io io) {
  const auto out = prepare_out(cfg, "ingest");
  IngestOptions opts;
  opts.alignment_note = value_or<std::string>(cfg, "alignment_note", opts.alignment_note);
  opts.split_seed = value_or<std::uint64_t>(cfg, "seed", 0);
  opts.warn = [&](const std::string& msg) { io.err << "warning: " << msg << "\n"; };
  const auto result = ingest(required_string(cfg, "data"), value_or<std::int64_t>(cfg, "resolution", 32), opts);
  save_store((out / "store.pzg").string(), result.store);
  write_manifest((out / "manifest.json").string(), result.manifest);
  io.out << "ingested " << result.manifest.count << " images at " << result.manifest.resolution << "px ("
         << result.manifest.skipped.size() << " skipped) -> " << (out / "store.pzg").string() << "\n";
  return kExitOk;
}

int cmd_train(json cfg, Io io) {
  const std::string layout_ref = value_or<std::string>(cfg, "layout", "facial_parts");
  const auto layout = load_layout(layout_ref);
  const auto spec = model_spec_from_json(cfg.value("model", json::object()), layout);

  PriorSpec prior;
  const json prior_cfg = cfg.value("prior", json::object());
  for (const auto& [key, value] : prior_cfg.items()) {
    if (key != "scale" && key != "dims" && key != "distribution") throw ValidationError("unknown prior key '" + key + "'");
  }
  if (prior_cfg.contains("dims")) {
    json dims_only = prior_cfg;
    dims_only.erase("scale");
    prior = prior_spec_from_json(dims_only);
  } else {
    prior = default_prior_spec(layout, value_or<int>(prior_cfg, "scale", 8));
  }
  check_prior_spec(prior, layout);

  json train_cfg = cfg.value("train", json::object());
  if (cfg.contains("seed")) {
    train_cfg["seed"] = cfg["seed"];
    cfg.erase("seed");
  }
  const auto tc = train_config_from_json(train_cfg);
  const auto dataset_path = required_string(cfg, "dataset");

  cfg["layout"] = layout_ref;
  cfg["model"] = model_spec_to_json(spec);
  cfg["prior"] = prior_spec_to_json(prior);
  cfg["train"] = train_config_to_json(tc);
  const auto out = prepare_out(cfg, "train");

  const auto store = load_store(dataset_path);
  TrainOptions options;
  options.out_dir = out.string();
  const std::int64_t report_every = std::max<std::int64_t>(1, tc.total_steps / 20);
  options.hooks.on_record = [&](const TrainRecord& r) {
    if (r.step % report_every == 0 || r.step == tc.total_steps) {
      io.out << "step " << r.step << "  d_loss " << r.d_loss << "  g_loss " << r.g_loss << "  gp " << r.gradient_penalty
             << "  gap " << r.score_gap << "  " << std::fixed << std::setprecision(1) << r.wall_seconds << "s"
             << std::defaultfloat << std::setprecision(6) << "\n"
             << std::flush;
    }
  };
  auto result = train(store, spec, prior, tc, options);

  std::vector<PartLatentBundle> bundles;
  for (std::uint64_t j = 0; j < 16; ++j) bundles.push_back(sample_bundle(prior, layout, mix_seed(0, j)));
  write_image_grid((out / "final_samples.png").string(), generate(result.checkpoint.generator, bundles), 8);
  io.out << "checkpoint: " << (out / "final.ckpt").string() << "\n";
  return kExitOk;
}

int cmd_sample(const json& cfg, Io io) {
  auto ckpt = load_checkpoint(required_string(cfg, "checkpoint"));
  const auto out = prepare_out(cfg, "sample");
  const auto n = value_or<std::int64_t>(cfg, "n", 16);
  const auto seed = value_or<std::uint64_t>(cfg, "seed", 0);
  if (n < 1) throw ValidationError("n must be >= 1");
  std::vector<PartLatentBundle> bundles;
  for (std::int64_t j = 0; j < n; ++j) bundles.push_back(sample_bundle(ckpt.prior, ckpt.spec.layout, mix_seed(seed, j)));
  const auto images = generate(ckpt.generator, bundles);
  write_image_grid((out / "samples.png").string(), images, value_or<std::int64_t>(cfg, "columns", 8));
  write_raw(out / "samples.f32", images);
  io.out << "wrote " << n << " samples to " << (out / "samples.png").string() << "\n";
  return kExitOk;
}

int cmd_swap(const json& cfg, Io io) {
  auto ckpt = load_checkpoint(required_string(cfg, "checkpoint"));
  const auto out = prepare_out(cfg, "swap");
  const auto& layout = ckpt.spec.layout;
  const auto parts = parse_parts(cfg.value("parts", json()));
  const std::set<PartId> part_set(parts.begin(), parts.end());
  const auto target_seed = value_or<std::uint64_t>(cfg, "target_seed", 0);
  const auto reference_seed = value_or<std::uint64_t>(cfg, "reference_seed", 1);
  const auto rows = value_or<std::int64_t>(cfg, "rows", 1);
  if (rows < 1) throw ValidationError("rows must be >= 1");

  std::vector<std::string> columns{"target", "reference", "mix"};
  if (parts.size() > 1)
    for (const int p : parts) columns.push_back("mix part " + std::to_string(p));

  std::vector<torch::Tensor> images;
  for (std::int64_t r = 0; r < rows; ++r) {
    const auto target = sample_bundle(ckpt.prior, layout, target_seed + static_cast<std::uint64_t>(r));
    const auto reference = sample_bundle(ckpt.prior, layout, reference_seed + static_cast<std::uint64_t>(r));
    std::vector<PartLatentBundle> row{target, reference, mix(target, reference, part_set)};
    if (parts.size() > 1)
      for (const int p : parts) row.push_back(mix(target, reference, {p}));
    // One image per forward pass keeps identical bundles bit-identical on screen.
    for (const auto& b : row) images.push_back(generate(ckpt.generator, b));
  }
  const auto grid = torch::stack(images);
  write_image_grid((out / "swap.png").string(), grid, static_cast<std::int64_t>(columns.size()));
  write_raw(out / "swap.f32", grid);
  std::ofstream legend(out / "swap.txt");
  for (std::size_t i = 0; i < columns.size(); ++i) legend << "column " << i << ": " << columns[i] << "\n";
  io.out << "wrote " << rows << " row(s) x " << columns.size() << " columns to " << (out / "swap.png").string() << "\n";
  return kExitOk;
}

int cmd_influence(const json& cfg, Io io) {
  ModelSpec spec;
  if (cfg.contains("checkpoint")) {
    spec = load_checkpoint(required_string(cfg, "checkpoint")).spec;
  } else {
    spec = model_spec_from_json(cfg.value("model", json::object()),
                                load_layout(value_or<std::string>(cfg, "layout", "facial_parts")));
  }
  const auto out = prepare_out(cfg, "influence");
  const auto map = symbolic_influence(spec);
  const auto counts = part_count_image(map);
  write_gray_png((out / "part_count.png").string(), counts, map.height(), map.width(),
                 static_cast<double>(spec.layout.num_parts()));
  {
    std::ofstream dump(out / "influence.txt");
    dump << dump_influence(map);
  }
  std::ofstream table(out / "regions.txt");
  std::ostringstream summary;
  summary << std::left << std::setw(6) << "part" << std::setw(8) << "basis" << std::right << std::setw(9) << "inside"
          << std::setw(14) << "interlocking" << std::setw(9) << "outside" << "\n";
  for (PartId p = 1; p <= spec.layout.num_parts(); ++p) {
    const std::pair<const char*, RegionMasks> bases[] = {{"support", classify_regions(map, p)},
                                                          {"cells", classify_regions_by_cells(map, spec.layout, p)}};
    for (const auto& [name, masks] : bases) {
      const std::string stem = "part" + std::to_string(p) + "_" + name + "_";
      write_mask_png((out / (stem + "inside.png")).string(), masks.inside);
      write_mask_png((out / (stem + "interlocking.png")).string(), masks.interlocking);
      write_mask_png((out / (stem + "outside.png")).string(), masks.outside);
      summary << std::left << std::setw(6) << p << std::setw(8) << name << std::right << std::setw(9)
              << masks.inside.count() << std::setw(14) << masks.interlocking.count() << std::setw(9)
              << masks.outside.count() << "\n";
    }
  }
  std::map<int, std::int64_t> histogram;
  for (const double c : counts) ++histogram[static_cast<int>(c)];
  summary << "pixels by number of influencing parts:";
  for (const auto& [k, n] : histogram) summary << "  " << k << ":" << n;
  summary << "\n";
  table << summary.str();
  io.out << summary.str();
  return kExitOk;
}

int cmd_eval_regions(const json& cfg, Io io) {
  auto ckpt = load_checkpoint(required_string(cfg, "checkpoint"));
  const auto out = prepare_out(cfg, "eval-regions");
  const auto& layout = ckpt.spec.layout;
  const auto part = value_or<int>(cfg, "part", 0);
  if (part < 0 || part > layout.num_parts()) {
    throw ValidationError("part must be 0 (all) or 1.." + std::to_string(layout.num_parts()));
  }
  SwapOptions swap;
  swap.samples = value_or<std::int64_t>(cfg, "n", 500);
  swap.seed = value_or<std::uint64_t>(cfg, "seed", 0);
  swap.batch_size = value_or<std::int64_t>(cfg, "batch_size", 50);

  const auto map = symbolic_influence(ckpt.spec);
  json report = json::array();
  std::ofstream table(out / "region_stats.txt");
  bool all_ordered = true;
  for (PartId p = (part == 0 ? 1 : part); p <= (part == 0 ? layout.num_parts() : part); ++p) {
    const auto diffs = swap_differences(ckpt.generator, p, swap);
    const auto heat = mean_heatmap(diffs);
    const std::string stem = "heatmap_part" + std::to_string(p);
    write_gray_png((out / (stem + ".png")).string(), heat.values, heat.resolution, heat.resolution);
    write_raw(out / (stem + ".f64"), heat.values);

    json part_report = {{"part", p}, {"name", layout.part_name(p)}, {"samples", heat.sample_count},
                        {"channel_reduction", "mean"}};
    for (const char* basis : {"cells", "support"}) {
      const auto masks = std::string(basis) == "support" ? classify_regions(map, p) : classify_regions_by_cells(map, layout, p);
      const auto stats = region_stats(diffs, masks);
      const bool ok = ordered(stats);
      all_ordered = all_ordered && ok;
      std::ostringstream text;
      text << "[" << basis << " basis] " << layout.part_name(p) << "\n" << format_region_stats(stats)
           << "median ordering inside > interlocking > outside (non-empty regions): " << (ok ? "yes" : "NO") << "\n\n";
      table << text.str();
      io.out << text.str();
      part_report[basis] = {{"inside", stats_json(stats.inside)},
                            {"interlocking", stats_json(stats.interlocking)},
                            {"outside", stats_json(stats.outside)},
                            {"ordered", ok}};
    }
    report.push_back(part_report);
  }
  std::ofstream(out / "region_stats.json") << report.dump(2) << "\n";
  io.out << (all_ordered ? "all region orderings hold\n" : "some region orderings do not hold\n");
  return kExitOk;
}

int cmd_fid(const json& cfg, Io io) {
  auto ckpt = load_checkpoint(required_string(cfg, "checkpoint"));
  const auto store = load_store(required_string(cfg, "store"));
  const auto out = prepare_out(cfg, "fid");
  const auto extractor = extractor_from_name(value_or<std::string>(cfg, "extractor", "pixel_downsample"));
  const auto n = value_or<std::int64_t>(cfg, "n", 500);
  const auto seed = value_or<std::uint64_t>(cfg, "seed", 0);
  if (n < 2) throw ValidationError("n must be >= 2");
  if (store.resolution() != ckpt.spec.out_resolution) throw ValidationError("store resolution does not match the model");

  std::vector<std::int64_t> order(static_cast<std::size_t>(store.count()));
  std::iota(order.begin(), order.end(), std::int64_t{0});
  std::mt19937_64 rng(mix_seed(seed, 0x5eed));
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(static_cast<std::size_t>(std::min<std::int64_t>(n, store.count())));
  std::sort(order.begin(), order.end());
  const auto real = store.gather(order);

  std::vector<torch::Tensor> generated;
  for (std::int64_t start = 0; start < n; start += 64) {
    std::vector<PartLatentBundle> bundles;
    for (std::int64_t j = start; j < std::min(n, start + 64); ++j)
      bundles.push_back(sample_bundle(ckpt.prior, ckpt.spec.layout, mix_seed(seed, static_cast<std::uint64_t>(j))));
    generated.push_back(generate(ckpt.generator, bundles));
  }
  auto warn = [&](const std::string& msg) { io.err << "warning: " << msg << "\n"; };
  const auto real_summary = extract_features(real, extractor, &ckpt.discriminator, warn);
  const auto gen_summary = extract_features(torch::cat(generated), extractor, &ckpt.discriminator, warn);
  FrechetReport fr;
  const double fid = frechet_distance(real_summary, gen_summary, &fr);
  {
    std::ofstream f(out / "real.feat", std::ios::binary);
    write_feature_summary(f, real_summary);
    std::ofstream g(out / "generated.feat", std::ios::binary);
    write_feature_summary(g, gen_summary);
  }
  const json log = {{"fid", fid},
                    {"extractor", extractor_name(extractor)},
                    {"n_real", real_summary.count},
                    {"n_generated", gen_summary.count},
                    {"eigenvalues_clipped", fr.clipped},
                    {"most_negative_eigenvalue", fr.most_negative_eigenvalue}};
  std::ofstream(out / "fid.json") << log.dump(2) << "\n";
  io.out << "FD[" << extractor_name(extractor) << "] real=" << real_summary.count << " generated=" << gen_summary.count
         << ": " << std::setprecision(10) << fid << "\n";
  return kExitOk;
}

int dispatch(const std::string& command, const json& cfg, Io io) {
  check_keys(command, cfg);
  if (command == "synth-faces") return cmd_synth_faces(cfg, io);
  if (command == "ingest") return cmd_ingest(cfg, io);
  if (command == "train") return cmd_train(cfg, io);
  if (command == "sample") return cmd_sample(cfg, io);
  if (command == "swap") return cmd_swap(cfg, io);
  if (command == "influence") return cmd_influence(cfg, io);
  if (command == "eval-regions") return cmd_eval_regions(cfg, io);
  if (command == "fid") return cmd_fid(cfg, io);
  throw ValidationError("unknown command '" + command + "'");
}

// Flags that were given on the command line override config file values.
struct FlagSet {
  std::string config;
  std::string out, layout, checkpoint, parts, extractor, data, dataset, store, alignment_note;
  std::int64_t seed = 0, n = 0, part = 0, resolution = 0, target_seed = 0, reference_seed = 0, rows = 0,
               columns = 0, batch_size = 0;
};

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Io io{out, err};
  configure_runtime(deterministic_mode_requested());

  CLI::App app{"Compositional GAN toolkit: part layouts, training, swaps, influence maps and region metrics"};
  app.require_subcommand(1);
  FlagSet f;
  std::string layout_path;
  std::string snapshot_path;

  auto* layout_check = app.add_subcommand("layout-check", "Parse and validate a layout file");
  layout_check->add_option("layout,--layout", layout_path, "Layout file (or face_swap / facial_parts)");

  auto* replay = app.add_subcommand("replay", "Re-run a command from its resolved_config.json");
  replay->add_option("snapshot", snapshot_path, "resolved_config.json")->required();
  replay->add_option("--out", f.out, "Output directory (overrides the snapshot)");

  std::map<std::string, CLI::App*> subs;
  std::map<std::string, std::vector<std::pair<CLI::Option*, std::string>>> bindings;
  auto sub = [&](const std::string& name, const std::string& desc) {
    auto* s = app.add_subcommand(name, desc);
    s->add_option("--config", f.config, "JSON config; explicit flags take precedence");
    bindings[name].push_back({s->add_option("--out", f.out, "Output directory"), "out"});
    subs[name] = s;
    return s;
  };
  auto bind = [&](const std::string& name, CLI::Option* opt, const std::string& key) { bindings[name].push_back({opt, key}); };

  {
    auto* s = sub("synth-faces", "Write procedurally drawn aligned face images");
    bind("synth-faces", s->add_option("--n", f.n, "Number of images"), "n");
    bind("synth-faces", s->add_option("--resolution", f.resolution, "Image side in pixels"), "resolution");
    bind("synth-faces", s->add_option("--seed", f.seed, "Seed"), "seed");
  }
  {
    auto* s = sub("ingest", "Preprocess an image folder into a store");
    bind("ingest", s->add_option("--data", f.data, "Image folder"), "data");
    bind("ingest", s->add_option("--resolution", f.resolution, "Target resolution"), "resolution");
    bind("ingest", s->add_option("--alignment-note", f.alignment_note, "Free-text alignment note"), "alignment_note");
    bind("ingest", s->add_option("--seed", f.seed, "Split seed recorded in the manifest"), "seed");
  }
  {
    auto* s = sub("train", "Train a compositional GAN");
    bind("train", s->add_option("--layout", f.layout, "Layout file or canonical name"), "layout");
    bind("train", s->add_option("--dataset", f.dataset, "Preprocessed store"), "dataset");
    bind("train", s->add_option("--seed", f.seed, "Training seed"), "seed");
  }
  {
    auto* s = sub("sample", "Render samples from a checkpoint");
    bind("sample", s->add_option("--checkpoint", f.checkpoint, "Checkpoint"), "checkpoint");
    bind("sample", s->add_option("--n", f.n, "Number of samples"), "n");
    bind("sample", s->add_option("--seed", f.seed, "Seed"), "seed");
    bind("sample", s->add_option("--columns", f.columns, "Grid columns"), "columns");
  }
  {
    auto* s = sub("swap", "Mix part priors of a target and a reference sample");
    bind("swap", s->add_option("--checkpoint", f.checkpoint, "Checkpoint"), "checkpoint");
    bind("swap", s->add_option("--target-seed,--seed", f.target_seed, "Target bundle seed"), "target_seed");
    bind("swap", s->add_option("--reference-seed", f.reference_seed, "Reference bundle seed"), "reference_seed");
    bind("swap", s->add_option("--parts", f.parts, "Comma-separated part ids taken from the reference"), "parts");
    bind("swap", s->add_option("--rows", f.rows, "Number of target/reference pairs"), "rows");
  }
  {
    auto* s = sub("influence", "Symbolic influence map and region masks");
    bind("influence", s->add_option("--checkpoint", f.checkpoint, "Take the model spec from a checkpoint"), "checkpoint");
    bind("influence", s->add_option("--layout", f.layout, "Layout file or canonical name"), "layout");
  }
  {
    auto* s = sub("eval-regions", "Swap-MSE heatmaps and per-region statistics");
    bind("eval-regions", s->add_option("--checkpoint", f.checkpoint, "Checkpoint"), "checkpoint");
    bind("eval-regions", s->add_option("--part", f.part, "Part id, 0 for all"), "part");
    bind("eval-regions", s->add_option("--n", f.n, "Swap pairs per part"), "n");
    bind("eval-regions", s->add_option("--seed", f.seed, "Seed"), "seed");
    bind("eval-regions", s->add_option("--batch-size", f.batch_size, "Render batch size"), "batch_size");
  }
  {
    auto* s = sub("fid", "Frechet distance between real and generated feature summaries");
    bind("fid", s->add_option("--checkpoint", f.checkpoint, "Checkpoint"), "checkpoint");
    bind("fid", s->add_option("--store", f.store, "Preprocessed real image store"), "store");
    bind("fid", s->add_option("--extractor", f.extractor, "pixel_downsample | discriminator_penultimate"), "extractor");
    bind("fid", s->add_option("--n", f.n, "Images per side"), "n");
    bind("fid", s->add_option("--seed", f.seed, "Seed"), "seed");
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  if (!reversed.empty()) reversed.pop_back();  // program name
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (layout_check->parsed()) {
      if (layout_path.empty()) throw ValidationError("layout-check needs a layout file");
      return cmd_layout_check(layout_path, io);
    }
    if (replay->parsed()) {
      json snapshot = read_json_file(snapshot_path);
      if (!snapshot.contains("command") || !snapshot["command"].is_string()) {
        throw ValidationError("snapshot " + snapshot_path + " has no command");
      }
      const auto command = snapshot["command"].get<std::string>();
      if (!f.out.empty()) snapshot["out"] = f.out;
      return dispatch(command, snapshot, io);
    }
    for (const auto& [name, s] : subs) {
      if (!s->parsed()) continue;
      json cfg = f.config.empty() ? json::object() : read_json_file(f.config);
      for (const auto& [opt, key] : bindings[name]) {
        if (opt->count() == 0) continue;
        const auto& raw = opt->results().back();
        if (key == "out" || key == "layout" || key == "checkpoint" || key == "parts" || key == "extractor" ||
            key == "data" || key == "dataset" || key == "store" || key == "alignment_note") {
          cfg[key] = raw;
        } else {
          try {
            cfg[key] = std::stoll(raw);
          } catch (const std::exception&) {
            throw ValidationError("--" + key + " expects an integer, got '" + raw + "'");
          }
        }
      }
      return dispatch(name, cfg, io);
    }
    return kExitValidation;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const json::exception& e) {
    err << "error: bad config: " << e.what() << "\n";
    return kExitValidation;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    err << "runtime failure: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace puzzlegan::cli
