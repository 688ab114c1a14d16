#include "splitamc/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <thread>

#include <json.hpp>

namespace splitamc {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kFormatVersion = 1;
constexpr const char* kPixelBlob = "pixels.f32le";
constexpr const char* kLabelBlob = "labels.u8";

int bin_of(double v, int grid, double half_range) {
  const double t = (v + half_range) / (2.0 * half_range) * grid;
  if (!(t > 0.0)) return 0;  // also catches NaN
  return std::min(grid - 1, static_cast<int>(std::floor(t)));
}

std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) return __builtin_bswap32(v);
  return v;
}

std::vector<char> read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

bool Dataset::operator==(const Dataset& o) const {
  if (class_names != o.class_names || grid != o.grid || frames_per_class != o.frames_per_class ||
      samples_per_frame != o.samples_per_frame || master_seed != o.master_seed ||
      images.size() != o.images.size())
    return false;
  // Bitwise comparison of doubles so that NaN-free round trips are exact.
  if (std::bit_cast<std::uint64_t>(gamma_data_db) != std::bit_cast<std::uint64_t>(o.gamma_data_db) ||
      std::bit_cast<std::uint64_t>(half_range) != std::bit_cast<std::uint64_t>(o.half_range) ||
      std::bit_cast<std::uint64_t>(normalization.mean) != std::bit_cast<std::uint64_t>(o.normalization.mean) ||
      std::bit_cast<std::uint64_t>(normalization.variance) != std::bit_cast<std::uint64_t>(o.normalization.variance))
    return false;
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].label != o.images[i].label) return false;
    if (images[i].pixels.rows() != o.images[i].pixels.rows() || images[i].pixels.cols() != o.images[i].pixels.cols())
      return false;
    if (std::memcmp(images[i].pixels.data(), o.images[i].pixels.data(),
                    sizeof(float) * static_cast<std::size_t>(images[i].pixels.size())) != 0)
      return false;
  }
  return true;
}

RowMat<long> histogram_counts(const IqFrame& frame, int grid, double half_range) {
  if (grid < 8) throw InvalidInput("grid must be >= 8");
  if (!(half_range > 0.0)) throw InvalidInput("half_range must be > 0");
  if (frame.size() == 0) throw InvalidInput("render_constellation: empty frame");
  if (frame.q_samples.size() != frame.i_samples.size()) throw ShapeMismatch("I and Q lengths differ");

  RowMat<long> counts = RowMat<long>::Zero(grid, grid);
  for (Index n = 0; n < frame.size(); ++n) {
    const int col = bin_of(frame.i_samples[n], grid, half_range);
    const int row = grid - 1 - bin_of(frame.q_samples[n], grid, half_range);
    ++counts(row, col);
  }
  return counts;
}

ConstellationImage render_constellation(const IqFrame& frame, int grid, double half_range) {
  const RowMat<long> counts = histogram_counts(frame, grid, half_range);
  const auto peak = static_cast<float>(counts.maxCoeff());
  ConstellationImage img;
  img.pixels = counts.cast<float>() / peak;
  img.label = frame.label;
  img.gamma_data_db = frame.gamma_data_db;
  return img;
}

Normalization pixel_statistics(const Dataset& ds) {
  if (ds.images.empty()) throw InvalidInput("dataset is empty");
  double sum = 0.0;
  double count = 0.0;
  for (const auto& img : ds.images) {
    sum += img.pixels.cast<double>().sum();
    count += static_cast<double>(img.pixels.size());
  }
  const double mean = sum / count;
  double sq = 0.0;
  for (const auto& img : ds.images) sq += (img.pixels.cast<double>().array() - mean).square().sum();
  return {mean, sq / count};
}

Dataset normalize_dataset(const Dataset& ds, double target_mean, double target_var) {
  if (!std::isfinite(target_mean) || !(target_var > 0.0) || !std::isfinite(target_var))
    throw InvalidInput("normalization targets must be finite with positive variance");
  const Normalization raw = pixel_statistics(ds);
  if (!(raw.variance > 0.0)) throw DegenerateInput("cannot normalize: pixel variance is zero");
  Dataset out = ds;
  out.normalization = {target_mean, target_var};
  return out;
}

std::uint64_t frame_seed(std::uint64_t master_seed, int label, int frame_index) {
  return derive_seed(master_seed,
                     {stream::kFrame, static_cast<std::uint64_t>(label), static_cast<std::uint64_t>(frame_index)});
}

Dataset build_dataset(const ModemConfig& modem_cfg, const BuildOptions& opts, std::uint64_t master_seed) {
  if (opts.frames_per_class < 1) throw InvalidInput("frames_per_class must be >= 1");
  if (opts.grid < 8) throw InvalidInput("grid must be >= 8");
  modem_cfg.validate();

  Dataset ds;
  for (int c = 0; c < kNumSchemes; ++c) ds.class_names.emplace_back(scheme_name(static_cast<Scheme>(c)));
  ds.grid = opts.grid;
  ds.frames_per_class = opts.frames_per_class;
  ds.samples_per_frame = modem_cfg.num_symbols;
  ds.gamma_data_db = modem_cfg.gamma_data_db;
  ds.half_range = opts.half_range;
  ds.master_seed = master_seed;

  const int total = kNumSchemes * opts.frames_per_class;
  ds.images.resize(static_cast<std::size_t>(total));

  auto make = [&](int slot) {
    const int label = slot / opts.frames_per_class;
    const int index = slot % opts.frames_per_class;
    ModemConfig cfg = modem_cfg;
    cfg.scheme = static_cast<Scheme>(label);
    cfg.seed = frame_seed(master_seed, label, index);
    ds.images[static_cast<std::size_t>(slot)] =
        render_constellation(generate_frame(cfg).frame, opts.grid, opts.half_range);
  };

  const unsigned workers = std::max(1u, std::min<unsigned>(opts.threads, static_cast<unsigned>(total)));
  if (workers == 1) {
    for (int s = 0; s < total; ++s) make(s);
  } else {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (int s = static_cast<int>(w); s < total; s += static_cast<int>(workers)) make(s);
      });
  }

  ds.normalization = pixel_statistics(ds);
  return ds;
}

void save_dataset(const Dataset& ds, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  json manifest = {
      {"version", kFormatVersion},
      {"class_names", ds.class_names},
      {"G", ds.grid},
      {"frames_per_class", ds.frames_per_class},
      {"samples_per_frame", ds.samples_per_frame},
      {"gamma_data_db", std::isfinite(ds.gamma_data_db) ? json(ds.gamma_data_db) : json("inf")},
      {"half_range", ds.half_range},
      {"master_seed", ds.master_seed},
      {"normalization", {{"mean", ds.normalization.mean}, {"variance", ds.normalization.variance}}},
      {"pixel_blob", kPixelBlob},
      {"label_blob", kLabelBlob},
  };

  {
    std::ofstream out(dir / "manifest.json");
    if (!out) throw IoError("cannot write manifest in " + dir.string());
    out << manifest.dump(2) << '\n';
  }

  std::ofstream pix(dir / kPixelBlob, std::ios::binary);
  std::ofstream lab(dir / kLabelBlob, std::ios::binary);
  if (!pix || !lab) throw IoError("cannot write blobs in " + dir.string());
  for (const auto& img : ds.images) {
    if (img.grid() != ds.grid) throw InvalidInput("image grid differs from dataset grid");
    for (Index k = 0; k < img.pixels.size(); ++k) {
      const std::uint32_t bits = to_le(std::bit_cast<std::uint32_t>(img.pixels.data()[k]));
      pix.write(reinterpret_cast<const char*>(&bits), sizeof bits);
    }
    const auto label = static_cast<std::uint8_t>(img.label);
    lab.write(reinterpret_cast<const char*>(&label), 1);
  }
  if (!pix || !lab) throw IoError("short write in " + dir.string());
}

Dataset load_dataset(const fs::path& dir) {
  json manifest;
  {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw IoError("cannot open " + (dir / "manifest.json").string());
    try {
      in >> manifest;
    } catch (const json::exception& e) {
      throw FormatError(std::string("malformed manifest: ") + e.what());
    }
  }

  Dataset ds;
  try {
    const int version = manifest.at("version").get<int>();
    if (version != kFormatVersion)
      throw UnsupportedVersion("unsupported dataset format version " + std::to_string(version));
    ds.class_names = manifest.at("class_names").get<std::vector<std::string>>();
    ds.grid = manifest.at("G").get<int>();
    ds.frames_per_class = manifest.at("frames_per_class").get<int>();
    ds.samples_per_frame = manifest.at("samples_per_frame").get<int>();
    const auto& gamma = manifest.at("gamma_data_db");
    ds.gamma_data_db = gamma.is_string() && gamma.get<std::string>() == "inf"
                           ? std::numeric_limits<double>::infinity()
                           : gamma.get<double>();
    ds.half_range = manifest.value("half_range", kDefaultHalfRange);
    ds.master_seed = manifest.at("master_seed").get<std::uint64_t>();
    ds.normalization.mean = manifest.at("normalization").at("mean").get<double>();
    ds.normalization.variance = manifest.at("normalization").at("variance").get<double>();

    const auto pixel_name = manifest.at("pixel_blob").get<std::string>();
    const auto label_name = manifest.at("label_blob").get<std::string>();
    if (ds.grid < 8 || ds.frames_per_class < 1 || ds.class_names.empty())
      throw FormatError("manifest has invalid dimensions");

    const std::size_t n_images = ds.class_names.size() * static_cast<std::size_t>(ds.frames_per_class);
    const std::size_t per_image = static_cast<std::size_t>(ds.grid) * static_cast<std::size_t>(ds.grid);
    const std::vector<char> pix = read_file(dir / pixel_name);
    const std::vector<char> lab = read_file(dir / label_name);
    if (pix.size() != n_images * per_image * sizeof(float))
      throw FormatError("pixel blob size mismatch: expected " + std::to_string(n_images * per_image * 4) +
                        " bytes, found " + std::to_string(pix.size()));
    if (lab.size() != n_images)
      throw FormatError("label blob size mismatch: expected " + std::to_string(n_images) + " bytes, found " +
                        std::to_string(lab.size()));

    ds.images.resize(n_images);
    for (std::size_t i = 0; i < n_images; ++i) {
      auto& img = ds.images[i];
      img.pixels.resize(ds.grid, ds.grid);
      for (std::size_t k = 0; k < per_image; ++k) {
        std::uint32_t bits;
        std::memcpy(&bits, pix.data() + (i * per_image + k) * sizeof(float), sizeof bits);
        img.pixels.data()[k] = std::bit_cast<float>(to_le(bits));
      }
      img.label = static_cast<std::uint8_t>(lab[i]);
      if (img.label >= static_cast<int>(ds.class_names.size())) throw FormatError("label out of range");
      img.gamma_data_db = ds.gamma_data_db;
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("manifest: ") + e.what());
  }
  return ds;
}

LabeledImages to_model_inputs(const Dataset& ds) {
  if (ds.images.empty()) throw InvalidInput("dataset is empty");
  const Normalization raw = pixel_statistics(ds);
  const bool identity = raw.mean == ds.normalization.mean && raw.variance == ds.normalization.variance;
  const double scale = identity ? 1.0 : std::sqrt(ds.normalization.variance / raw.variance);

  const Index per_image = static_cast<Index>(ds.grid) * ds.grid;
  LabeledImages out;
  out.grid = ds.grid;
  out.pixels.resize(static_cast<Index>(ds.images.size()), per_image);
  out.labels.reserve(ds.images.size());
  for (std::size_t i = 0; i < ds.images.size(); ++i) {
    const auto& img = ds.images[i];
    const Eigen::Map<const Vec<float>> flat(img.pixels.data(), per_image);
    auto row = out.pixels.row(static_cast<Index>(i));
    if (identity)
      row = flat.cast<double>().transpose();
    else
      row = ((flat.cast<double>().array() - raw.mean) * scale + ds.normalization.mean).matrix().transpose();
    out.labels.push_back(static_cast<std::uint8_t>(img.label));
  }
  return out;
}

LabeledImages select_rows(const LabeledImages& src, std::span<const Index> rows) {
  LabeledImages out;
  out.grid = src.grid;
  out.pixels.resize(static_cast<Index>(rows.size()), src.pixels.cols());
  out.labels.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.pixels.row(static_cast<Index>(i)) = src.pixels.row(rows[i]);
    out.labels.push_back(src.labels[static_cast<std::size_t>(rows[i])]);
  }
  return out;
}

namespace {

std::vector<std::vector<Index>> rows_by_class(const LabeledImages& all) {
  int classes = 0;
  for (auto l : all.labels) classes = std::max(classes, static_cast<int>(l) + 1);
  std::vector<std::vector<Index>> by_class(static_cast<std::size_t>(classes));
  for (Index r = 0; r < all.size(); ++r) by_class[all.labels[static_cast<std::size_t>(r)]].push_back(r);
  return by_class;
}

}  // namespace

TrainTestSplit split_train_test(const LabeledImages& all, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw InvalidInput("test_fraction must be in (0, 1)");
  Rng rng(derive_seed(seed, {stream::kSplit}));
  std::vector<Index> train_rows, test_rows;
  for (auto& rows : rows_by_class(all)) {
    std::shuffle(rows.begin(), rows.end(), rng);
    const auto n_test = static_cast<std::size_t>(std::lround(test_fraction * static_cast<double>(rows.size())));
    test_rows.insert(test_rows.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(n_test));
    train_rows.insert(train_rows.end(), rows.begin() + static_cast<std::ptrdiff_t>(n_test), rows.end());
  }
  return {select_rows(all, train_rows), select_rows(all, test_rows)};
}

std::vector<LabeledImages> partition_clients(const LabeledImages& all, int num_clients, std::uint64_t seed) {
  if (num_clients < 1) throw InvalidInput("num_clients must be >= 1");
  Rng rng(derive_seed(seed, {stream::kPartition}));
  std::vector<std::vector<Index>> shards(static_cast<std::size_t>(num_clients));
  for (auto& rows : rows_by_class(all)) {
    std::shuffle(rows.begin(), rows.end(), rng);
    for (std::size_t i = 0; i < rows.size(); ++i) shards[i % shards.size()].push_back(rows[i]);
  }
  std::vector<LabeledImages> out;
  for (auto& rows : shards) {
    std::sort(rows.begin(), rows.end());
    out.push_back(select_rows(all, rows));
  }
  return out;
}

LabeledImages concatenate(std::span<const LabeledImages> parts) {
  LabeledImages out;
  Index rows = 0;
  for (const auto& p : parts) {
    rows += p.size();
    out.grid = p.grid;
  }
  const Index cols = parts.empty() ? 0 : parts.front().pixels.cols();
  out.pixels.resize(rows, cols);
  Index at = 0;
  for (const auto& p : parts) {
    if (p.pixels.cols() != cols) throw ShapeMismatch("concatenate: image sizes differ");
    out.pixels.middleRows(at, p.size()) = p.pixels;
    out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
    at += p.size();
  }
  return out;
}

}  // namespace splitamc
