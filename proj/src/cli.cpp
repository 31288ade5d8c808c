// Subcommand front end. Every run prints its resolved configuration and
// seed; file outputs land under --out; exit codes: 0 ok, 1 usage, 2 runtime.
#include "bic/cli.hpp"

#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <string>
#include <vector>

#include "bic/data.hpp"
#include "bic/train.hpp"

namespace fs = std::filesystem;

namespace bic {
namespace {

// RADIAL_CANON_SEED wins over config files and flags
bool seed_override(std::uint64_t& seed) {
  const char* env = std::getenv("RADIAL_CANON_SEED");
  if (!env || !*env) return false;
  seed = std::stoull(env);
  return true;
}

std::string read_text_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw UnreadableFile("cannot read " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

fs::path out_path(const std::string& out_dir, const std::string& name) {
  fs::path p(name);
  if (p.is_absolute()) return p;
  return fs::path(out_dir) / p;
}

std::ofstream open_out(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream os(p);
  if (!os) throw UnreadableFile("cannot open for writing: " + p.string());
  return os;
}

struct LoadedModel {
  TrainConfig cfg;
  BicModel<float> model;
  Pipeline pipe;
};

LoadedModel load_model(const std::string& path, int image_width, int channels) {
  Checkpoint ck = read_checkpoint(path);
  LoadedModel lm{parse_train_config(ck.config), {}, {}};
  lm.pipe = make_pipeline(image_width, channels, lm.cfg);
  lm.model = init_model(net_config<float>(lm.cfg, lm.pipe), lm.cfg.seed);
  load_model_params(lm.model, ck);
  return lm;
}

std::vector<Image<float>> dataset_from_flags(const std::string& data_dir,
                                             const std::string& kind, int count, int size,
                                             double noise, std::uint64_t gen_seed) {
  if (!data_dir.empty()) return load_image_dir(data_dir);
  SyntheticSpec spec;
  spec.kind = synthetic_kind_from_string(kind);
  spec.count = count;
  spec.image_size = size;
  spec.noise_std = noise;
  spec.seed = gen_seed;
  return gen_dataset(spec);
}

void print_config(std::ostream& out, const TrainConfig& cfg, int threads) {
  out << to_text(cfg) << "threads=" << threads << "\n";
}

int run_geometry(std::ostream& out, int beams, int length, int thickness, bool exact,
                 int threads) {
  out << "beams=" << beams << "\nlength=" << length << "\nthickness=" << thickness
      << "\nexact=" << (exact ? 1 : 0) << "\nseed=0\nthreads=" << threads << "\n";
  double ca = coverage_approx(beams, length, thickness);
  double oa = overlap_approx(beams, length, thickness);
  out << "B,D,epsilon,coverage_approx,overlap_approx,coverage_exact,overlap_exact,rel_error\n";
  out << beams << "," << length << "," << thickness << "," << std::setprecision(10) << ca
      << "," << oa << ",";
  if (exact) {
    BeamMask mask = build_mask(2 * (length + thickness) + 3, beams, length, thickness);
    CoverageCount cc = exact_coverage(mask);
    double rel = std::abs(ca - double(cc.covered)) / double(cc.covered);
    out << cc.covered << "," << cc.overlap << "," << rel << "\n";
  } else {
    out << ",,\n";
  }
  return 0;
}

int run_sample(std::ostream& out, const std::string& input, const TrainConfig& cfg,
               const std::string& out_dir, const std::string& output, int threads) {
  print_config(out, cfg, threads);
  Image<float> img = read_png<float>(input);
  if (img.width != img.height) throw NonSquareImage("sample: input must be square");
  Pipeline pipe = make_pipeline(img.width, img.channels, cfg);
  BeamTensor<float> bt = sample(pad(img, pipe.pad), pipe.mask);
  fs::path dst = out_path(out_dir, output);
  auto os = open_out(dst);
  os << "beam,offset,step,channel,value\n";
  for (int b = 0; b < bt.num_beams; ++b)
    for (int w = 0; w < bt.width; ++w)
      for (int d = 0; d < bt.length; ++d)
        for (int c = 0; c < bt.channels; ++c)
          os << b << "," << w << "," << d << "," << c << "," << std::setprecision(9)
             << bt.at(b, w, d, c) << "\n";
  out << "wrote " << dst.string() << " (" << bt.num_beams << "x" << bt.width << "x"
      << bt.length << "x" << bt.channels << ")\n";
  return 0;
}

int run_gen_data(std::ostream& out, const std::string& kind, int count, int size,
                 double azimuth, double noise, std::uint64_t seed, const std::string& regime,
                 int beams, double split_fraction, const std::string& out_dir, int threads) {
  out << "kind=" << kind << "\ncount=" << count << "\nsize=" << size
      << "\nazimuth=" << azimuth << "\nnoise=" << noise << "\nregime=" << regime
      << "\nbeams=" << beams << "\nsplit_fraction=" << split_fraction << "\nseed=" << seed
      << "\nthreads=" << threads << "\n";
  SyntheticSpec spec;
  spec.kind = synthetic_kind_from_string(kind);
  spec.count = count;
  spec.image_size = size;
  spec.light_azimuth = azimuth;
  spec.noise_std = noise;
  spec.seed = seed;
  auto imgs = gen_dataset(spec);

  std::vector<char> in_train(size_t(count), 1);  // a lone image stays in train
  if (count >= 2) {
    Split split = split_dataset(count, split_fraction, seed);
    for (auto& f : in_train) f = 0;
    for (int i : split.train) in_train[size_t(i)] = 1;
  }

  const bool rotate_finite = regime == "finite";
  const bool rotate_continuous = regime == "continuous";
  if (!rotate_finite && !rotate_continuous && regime != "none")
    throw DomainError("gen-data: regime must be none, finite, or continuous");
  Rng rng(stream_seed(seed, 0xa09));

  fs::create_directories(out_dir);
  auto manifest = open_out(fs::path(out_dir) / "manifest.csv");
  manifest << "filename,theta_degrees,k,split\n";
  for (int i = 0; i < count; ++i) {
    double theta = 0.0;
    int k = 0;
    if (rotate_finite || rotate_continuous) {
      auto aug = augment(imgs[size_t(i)], rotate_finite ? Regime::Finite : Regime::Continuous,
                         beams, rng);
      imgs[size_t(i)] = std::move(aug.image);
      theta = aug.theta;
      k = aug.k;
    }
    char name[16];
    std::snprintf(name, sizeof(name), "%05d.png", i);
    write_png((fs::path(out_dir) / name).string(), imgs[size_t(i)]);
    manifest << name << "," << theta << ",";
    if (!rotate_continuous) manifest << k;
    manifest << "," << (in_train[size_t(i)] ? "train" : "test") << "\n";
  }
  out << "wrote " << count << " images + manifest.csv under " << out_dir << "\n";
  return 0;
}

int run_train(std::ostream& out, TrainConfig cfg, const std::string& data_dir,
              const std::string& kind, int count, int size, double noise,
              std::uint64_t gen_seed, const std::string& out_dir, int threads) {
  print_config(out, cfg, threads);
  auto ds = dataset_from_flags(data_dir, kind, count, size, noise, gen_seed);
  Split split = split_dataset(int(ds.size()), cfg.split_fraction, cfg.seed);
  std::vector<Image<float>> train_set, test_set;
  for (int i : split.train) train_set.push_back(ds[size_t(i)]);
  for (int i : split.test) test_set.push_back(ds[size_t(i)]);

  fs::create_directories(out_dir);
  std::string ckpt = (fs::path(out_dir) / "model.ckpt").string();
  TrainOutcome res = train(cfg, train_set, ckpt);

  auto os = open_out(fs::path(out_dir) / "loss.csv");
  os << "iteration,loss\n";
  for (size_t i = 0; i < res.curve.size(); ++i)
    os << (i + 1) << "," << std::setprecision(17) << res.curve[i] << "\n";

  out << "checkpoint=" << ckpt << "\n";
  if (!res.curve.empty())
    out << "first_loss=" << res.curve.front() << "\nlast_loss=" << res.curve.back() << "\n";
  EvalReport rep = evaluate(res.model, test_set, cfg, 8, cfg.seed);
  out << "holdout_mean_loss=" << rep.mean_loss
      << "\nholdout_mean_angular_error_deg=" << rep.mean_angular_error_deg << "\n";
  return 0;
}

int run_eval(std::ostream& out, const std::string& model_path, const std::string& data_dir,
             const std::string& kind, int count, int size, double noise,
             std::uint64_t gen_seed, int draws, std::uint64_t seed, bool seed_set,
             const std::string& out_dir, int threads) {
  auto ds = dataset_from_flags(data_dir, kind, count, size, noise, gen_seed);
  LoadedModel lm = load_model(model_path, ds.front().width, ds.front().channels);
  if (seed_set) lm.cfg.seed = seed;
  print_config(out, lm.cfg, threads);
  EvalReport rep = evaluate(lm.model, ds, lm.cfg, draws, lm.cfg.seed);
  out << "count=" << rep.count << "\nmean_loss=" << rep.mean_loss
      << "\nmean_angular_error_deg=" << rep.mean_angular_error_deg
      << "\nmean_angular_error_from_loss_deg=" << rep.mean_angular_error_from_loss_deg
      << "\n";
  auto os = open_out(fs::path(out_dir) / "report.csv");
  os << "bin_start_deg,count\n";
  for (size_t b = 0; b < rep.histogram.size(); ++b)
    os << (b * 10) << "," << rep.histogram[b] << "\n";
  return 0;
}

int run_canonicalize(std::ostream& out, const std::string& model_path,
                     const std::string& input, const std::string& output,
                     const std::string& out_dir, int threads) {
  Image<float> img = read_png<float>(input);
  if (img.width != img.height) throw NonSquareImage("canonicalize: input must be square");
  LoadedModel lm = load_model(model_path, img.width, img.channels);
  print_config(out, lm.cfg, threads);
  double theta = predict_angle_with(
      [&](const Image<float>& padded) { return forward(lm.model, sample(padded, lm.pipe.mask)).z; },
      img, lm.pipe);
  Image<float> fixed = rotate(img, -theta);
  fs::path dst = out_path(out_dir, output);
  if (dst.has_parent_path()) fs::create_directories(dst.parent_path());
  write_png(dst.string(), fixed);
  out << "predicted_angle_deg=" << theta << "\nwrote " << dst.string() << "\n";
  return 0;
}

int run_saliency(std::ostream& out, const std::string& model_path, const std::string& input,
                 const std::string& output, const std::string& out_dir, int threads) {
  Image<float> img = read_png<float>(input);
  if (img.width != img.height) throw NonSquareImage("saliency: input must be square");
  LoadedModel lm = load_model(model_path, img.width, img.channels);
  print_config(out, lm.cfg, threads);
  Image<float> heat = saliency(lm.model, img, lm.cfg);
  fs::path dst = out_path(out_dir, output);
  if (dst.has_parent_path()) fs::create_directories(dst.parent_path());
  write_png(dst.string(), heat);
  out << "wrote " << dst.string() << " (" << heat.width << "x" << heat.height << ")\n";
  return 0;
}

int run_stability(std::ostream& out, const std::string& model_path,
                  const std::string& data_dir, const std::string& kind, int count, int size,
                  double noise, std::uint64_t gen_seed, int max_shift,
                  const std::string& out_dir, int threads) {
  auto ds = dataset_from_flags(data_dir, kind, count, size, noise, gen_seed);
  LoadedModel lm = load_model(model_path, ds.front().width, ds.front().channels);
  print_config(out, lm.cfg, threads);
  auto rows = stability_sweep(lm.model, ds, lm.cfg, max_shift);
  auto os = open_out(fs::path(out_dir) / "stability.csv");
  os << "dx,dy,mean_deviation_deg\n";
  double worst = 0.0;
  for (const auto& r : rows) {
    os << r.dx << "," << r.dy << "," << std::setprecision(10) << r.mean_deviation_deg << "\n";
    worst = std::max(worst, r.mean_deviation_deg);
  }
  out << "rows=" << rows.size() << "\nworst_mean_deviation_deg=" << worst << "\n";
  return 0;
}

int run_export(std::ostream& out, const std::string& model_path, const std::string& input,
               double orbit_step, const std::string& out_dir, int threads) {
  Image<float> img = read_png<float>(input);
  if (img.width != img.height) throw NonSquareImage("export-embeddings: input must be square");
  LoadedModel lm = load_model(model_path, img.width, img.channels);
  print_config(out, lm.cfg, threads);
  if (!(orbit_step > 0.0) || orbit_step > 360.0)
    throw DomainError("export-embeddings: orbit step must lie in (0, 360]");
  std::vector<double> orbit;
  for (double a = 0.0; a < 360.0; a += orbit_step) orbit.push_back(a);
  Tensor<float> M = export_embeddings(lm.model, img, orbit, lm.cfg);
  auto os = open_out(fs::path(out_dir) / "embeddings.csv");
  os << "angle_deg,beam";
  for (int l = 0; l < lm.cfg.latent_dim; ++l) os << ",e" << l;
  os << "\n";
  for (size_t a = 0; a < orbit.size(); ++a)
    for (int b = 0; b < lm.cfg.num_beams; ++b) {
      os << orbit[a] << "," << b;
      for (int l = 0; l < lm.cfg.latent_dim; ++l)
        os << "," << std::setprecision(9)
           << M.mat()(long(a) * lm.cfg.num_beams + b, l);
      os << "\n";
    }
  out << "rows=" << orbit.size() * size_t(lm.cfg.num_beams) << "\n";
  return 0;
}

}  // namespace

int cli_main(int argc, char** argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"radial beam image canonicalization"};
  app.require_subcommand(1);
  int threads = 1;
  app.add_option("--threads", threads, "worker threads (1 keeps runs deterministic)")
      ->check(CLI::PositiveNumber);

  // geometry
  auto* geo = app.add_subcommand("geometry", "coverage and overlap of a beam layout");
  int g_beams = 16, g_length = 32, g_thickness = 1;
  bool g_exact = false;
  geo->add_option("--beams", g_beams);
  geo->add_option("--length", g_length);
  geo->add_option("--thickness", g_thickness);
  geo->add_flag("--exact", g_exact, "also count pixels exactly");

  // shared synthetic-data flags
  std::string data_dir, kind = "lit_sphere";
  int count = 16, size = 64;
  double noise = 0.0;
  std::uint64_t gen_seed = 0;
  auto add_data_flags = [&](CLI::App* sub) {
    sub->add_option("--data", data_dir, "directory of .png images");
    sub->add_option("--kind", kind, "lit_sphere | oriented_glyph | gradient_disk");
    sub->add_option("--count", count);
    sub->add_option("--size", size);
    sub->add_option("--noise", noise);
    sub->add_option("--gen-seed", gen_seed);
  };

  std::string out_dir = ".";
  app.add_option("--out", out_dir, "directory for file outputs");

  // sample
  auto* smp = app.add_subcommand("sample", "write the beam tensor of one image as CSV");
  std::string s_input, s_output = "beams.csv";
  TrainConfig s_cfg;
  smp->add_option("--input", s_input)->required();
  smp->add_option("--output", s_output);
  smp->add_option("--beams", s_cfg.num_beams);
  smp->add_option("--length", s_cfg.beam_length);
  smp->add_option("--thickness", s_cfg.thickness);
  std::string s_preset = "none";
  smp->add_option("--preset", s_preset, "a | b | c beam length presets");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "write a synthetic dataset + manifest");
  double gd_azimuth = 90.0;
  std::string gd_regime = "none";
  int gd_beams = 16;
  double gd_split = 0.8;
  std::uint64_t gd_seed = 0;
  gen->add_option("--kind", kind);
  gen->add_option("--count", count);
  gen->add_option("--size", size);
  gen->add_option("--azimuth", gd_azimuth);
  gen->add_option("--noise", noise);
  gen->add_option("--seed", gd_seed);
  gen->add_option("--regime", gd_regime, "none | finite | continuous rotation of samples");
  gen->add_option("--beams", gd_beams, "subgroup order for the finite regime");
  gen->add_option("--split", gd_split);

  // train
  auto* trn = app.add_subcommand("train", "fit the angle regressor");
  std::string t_config_path;
  trn->add_option("--config", t_config_path, "key=value config file");
  TrainConfig t_cfg;
  long long t_iterations = -1;
  int t_batch = -1, t_beams = -1, t_length = -1, t_thickness = -1, t_latent = -1;
  double t_lr = -1, t_split = -1, t_edge = -1;
  std::string t_loss, t_regime, t_preset;
  std::uint64_t t_seed = 0;
  bool t_seed_set = false;
  trn->add_option("--iterations", t_iterations);
  trn->add_option("--batch", t_batch);
  trn->add_option("--beams", t_beams);
  trn->add_option("--length", t_length);
  trn->add_option("--thickness", t_thickness);
  trn->add_option("--latent", t_latent);
  trn->add_option("--lr", t_lr);
  trn->add_option("--loss", t_loss, "circle_only | sum | dynamic");
  trn->add_option("--regime", t_regime, "finite | continuous");
  trn->add_option("--preset", t_preset, "a | b | c beam length presets");
  trn->add_option("--split", t_split);
  trn->add_option("--edge-factor", t_edge);
  trn->add_option_function<std::uint64_t>(
      "--seed", [&](const std::uint64_t& v) { t_seed = v; t_seed_set = true; });
  add_data_flags(trn);

  // eval
  auto* evl = app.add_subcommand("eval", "score a checkpoint on a dataset");
  std::string e_model;
  int e_draws = 8;
  std::uint64_t e_seed = 0;
  bool e_seed_set = false;
  evl->add_option("--model", e_model)->required();
  evl->add_option("--draws", e_draws);
  evl->add_option_function<std::uint64_t>(
      "--seed", [&](const std::uint64_t& v) { e_seed = v; e_seed_set = true; });
  add_data_flags(evl);

  // canonicalize
  auto* can = app.add_subcommand("canonicalize", "rotate an image back to canonical");
  std::string c_model, c_input, c_output = "canonical.png";
  can->add_option("--model", c_model)->required();
  can->add_option("--input", c_input)->required();
  can->add_option("--output", c_output);

  // saliency
  auto* sal = app.add_subcommand("saliency", "input-gradient heat map of one image");
  std::string sa_model, sa_input, sa_output = "saliency.png";
  sal->add_option("--model", sa_model)->required();
  sal->add_option("--input", sa_input)->required();
  sal->add_option("--output", sa_output);

  // stability
  auto* stb = app.add_subcommand("stability", "angle drift under integer translations");
  std::string st_model;
  int st_max_shift = 5;
  stb->add_option("--model", st_model)->required();
  stb->add_option("--max-shift", st_max_shift);
  add_data_flags(stb);

  // export-embeddings
  auto* exp = app.add_subcommand("export-embeddings", "beam embeddings over an orbit");
  std::string x_model, x_input;
  double x_step = 45.0;
  exp->add_option("--model", x_model)->required();
  exp->add_option("--input", x_input)->required();
  exp->add_option("--orbit-step", x_step, "degrees between orbit samples");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    if (*geo) return run_geometry(out, g_beams, g_length, g_thickness, g_exact, threads);
    if (*smp) {
      s_cfg.beam_preset = beam_preset_from_string(s_preset);
      return run_sample(out, s_input, s_cfg, out_dir, s_output, threads);
    }
    if (*gen) {
      seed_override(gd_seed);
      return run_gen_data(out, kind, count, size, gd_azimuth, noise, gd_seed, gd_regime,
                          gd_beams, gd_split, out_dir, threads);
    }
    if (*trn) {
      TrainConfig cfg = t_config_path.empty()
                            ? TrainConfig{}
                            : parse_train_config(read_text_file(t_config_path));
      if (t_iterations >= 0) cfg.iterations = t_iterations;
      if (t_batch > 0) cfg.batch_size = t_batch;
      if (t_beams > 0) cfg.num_beams = t_beams;
      if (t_length > 0) cfg.beam_length = t_length;
      if (t_thickness >= 0) cfg.thickness = t_thickness;
      if (t_latent > 0) cfg.latent_dim = t_latent;
      if (t_lr > 0) cfg.learning_rate = t_lr;
      if (!t_loss.empty()) cfg.loss_mode = loss_mode_from_string(t_loss);
      if (!t_regime.empty()) cfg.rotation_regime = regime_from_string(t_regime);
      if (!t_preset.empty()) cfg.beam_preset = beam_preset_from_string(t_preset);
      if (t_split > 0) cfg.split_fraction = t_split;
      if (t_edge > 0) cfg.edge_factor = t_edge;
      if (t_seed_set) cfg.seed = t_seed;
      seed_override(cfg.seed);
      cfg.validate();
      return run_train(out, cfg, data_dir, kind, count, size, noise, gen_seed, out_dir,
                       threads);
    }
    if (*evl) {
      seed_override(e_seed) && (e_seed_set = true);
      return run_eval(out, e_model, data_dir, kind, count, size, noise, gen_seed, e_draws,
                      e_seed, e_seed_set, out_dir, threads);
    }
    if (*can) return run_canonicalize(out, c_model, c_input, c_output, out_dir, threads);
    if (*sal) return run_saliency(out, sa_model, sa_input, sa_output, out_dir, threads);
    if (*stb)
      return run_stability(out, st_model, data_dir, kind, count, size, noise, gen_seed,
                           st_max_shift, out_dir, threads);
    if (*exp) return run_export(out, x_model, x_input, x_step, out_dir, threads);
    err << "error: no subcommand\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace bic
