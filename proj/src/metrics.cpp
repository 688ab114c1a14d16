#include "splitamc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace splitamc {

double pcc(Index n_correct, Index n_test) {
  if (n_test <= 0) throw InvalidInput("pcc: n_test must be > 0");
  if (n_correct < 0 || n_correct > n_test) throw InvalidInput("pcc: n_correct must lie in [0, n_test]");
  return static_cast<double>(n_correct) / static_cast<double>(n_test) * 100.0;
}

double Cdf::at(double x) const {
  const auto it = std::upper_bound(sorted_values.begin(), sorted_values.end(), x);
  if (it == sorted_values.begin()) return 0.0;
  return cumulative[static_cast<std::size_t>(it - sorted_values.begin() - 1)];
}

Cdf value_cdf(std::span<const double> values) {
  if (values.empty()) throw InvalidInput("value_cdf: empty input");
  std::vector<double> mags(values.size());
  std::transform(values.begin(), values.end(), mags.begin(), [](double v) { return std::abs(v); });
  std::sort(mags.begin(), mags.end());

  Cdf cdf;
  const auto n = static_cast<double>(mags.size());
  for (std::size_t i = 0; i < mags.size(); ++i) {
    if (i + 1 < mags.size() && mags[i + 1] == mags[i]) continue;
    cdf.sorted_values.push_back(mags[i]);
    cdf.cumulative.push_back(static_cast<double>(i + 1) / n);
  }
  return cdf;
}

std::string format_number(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  return out;
}

void close_out(std::ofstream& out, const std::filesystem::path& path) {
  out.close();
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

void write_loss_svg(std::span<const RoundRecord> records, const std::filesystem::path& path) {
  constexpr double W = 640, H = 400, pad = 40;
  double lo = records.front().loss, hi = lo;
  for (const auto& r : records) {
    lo = std::min(lo, r.loss);
    hi = std::max(hi, r.loss);
  }
  if (hi == lo) hi = lo + 1.0;
  const double last = std::max(1, records.back().round);

  auto out = open_out(path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << pad << "\" y=\"20\" font-size=\"12\">loss vs round (" << format_number(lo) << " .. "
      << format_number(hi) << ")</text>\n"
      << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"1\" points=\"";
  for (const auto& r : records) {
    const double x = pad + (W - 2 * pad) * r.round / last;
    const double y = H - pad - (H - 2 * pad) * (r.loss - lo) / (hi - lo);
    out << x << ',' << y << ' ';
  }
  out << "\"/>\n</svg>\n";
  close_out(out, path);
}

}  // namespace

void export_learning_curve(std::span<const RoundRecord> records, const std::filesystem::path& path,
                           const std::filesystem::path& svg_path) {
  if (records.empty()) throw InvalidInput("export_learning_curve: no records");
  auto out = open_out(path);
  out << "round,loss,accuracy\n";
  for (const auto& r : records) {
    out << r.round << ',' << format_number(r.loss) << ',';
    if (r.eval_accuracy) out << format_number(*r.eval_accuracy);
    out << '\n';
  }
  close_out(out, path);
  if (!svg_path.empty()) write_loss_svg(records, svg_path);
}

LearningCurve read_learning_curve(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line) || line != "round,loss,accuracy") throw FormatError("learning curve: bad header");

  LearningCurve curve;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string round, loss, acc;
    std::getline(row, round, ',');
    std::getline(row, loss, ',');
    std::getline(row, acc);
    try {
      curve.rounds.push_back(std::stoi(round));
      curve.loss.push_back(std::stod(loss));
      curve.accuracy.push_back(acc.empty() ? std::nullopt : std::optional<double>(std::stod(acc)));
    } catch (const std::logic_error&) {
      throw FormatError("learning curve: malformed row '" + line + "'");
    }
  }
  return curve;
}

void write_records_csv(std::span<const RoundRecord> records, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << kRecordsHeader << '\n';
  for (const auto& r : records) {
    out << r.round << ',' << r.active_client << ',' << format_number(r.loss) << ',' << r.ul_payload_elems << ','
        << r.dl_payload_elems << ',' << format_number(r.h_realization) << ',';
    if (r.eval_accuracy) out << format_number(*r.eval_accuracy);
    out << '\n';
  }
  close_out(out, path);
}

double median_abs(std::span<const double> values) {
  if (values.empty()) throw InvalidInput("median_abs: empty input");
  std::vector<double> mags(values.size());
  std::transform(values.begin(), values.end(), mags.begin(), [](double v) { return std::abs(v); });
  const std::size_t mid = mags.size() / 2;
  std::nth_element(mags.begin(), mags.begin() + static_cast<std::ptrdiff_t>(mid), mags.end());
  const double upper = mags[mid];
  if (mags.size() % 2 == 1) return upper;
  const double lower = *std::max_element(mags.begin(), mags.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

ScaleReport scale_report(const SplitModel& model, const LabeledImages& images, Index batch) {
  if (images.size() == 0) throw InvalidInput("scale_report: no images");
  const Index n = std::min(batch, images.size());
  const Tensor smashed = forward_lower(model, make_input(images.pixels.topRows(n), images.grid));
  const VectorXd weights = model.get_lower();

  ScaleReport rep;
  const std::span<const double> s(smashed.values.data(), static_cast<std::size_t>(smashed.values.size()));
  const std::span<const double> w(weights.data(), static_cast<std::size_t>(weights.size()));
  rep.median_abs_smashed = median_abs(s);
  rep.median_abs_weights = median_abs(w);
  rep.ratio = rep.median_abs_weights > 0.0 ? rep.median_abs_smashed / rep.median_abs_weights : 0.0;
  rep.smashed_cdf = value_cdf(s);
  rep.weights_cdf = value_cdf(w);
  return rep;
}

}  // namespace splitamc
