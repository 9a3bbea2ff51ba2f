#include "meshalign/evaluate.hpp"

#include <exception>
#include <fstream>

#include "meshalign/parallel.hpp"

namespace meshalign {

Alignment align_pair(const AlignModel& model, const Image& ref, const Image& tar) {
  Tape tape;
  BoundParameters p(tape, model.params, false);
  const ForwardOutput out = forward(model, p, tape.constant(ref.to_array()), tape.constant(tar.to_array()));
  Alignment a;
  a.warped = Image::from_array(out.warped.value());
  a.mask = out.mask;
  a.fused = average_fusion(ref, a.warped);
  a.mesh = Mesh::from_array(out.final_mesh.value());
  return a;
}

namespace {

EvalRow score(const Sample& s, const Image& warped, const Mask& mask) {
  EvalRow row{s.id, s.difficulty, kPsnrCap, 1.0};
  if (mask.count() == 0) return {s.id, s.difficulty, 0.0, 0.0};
  row.psnr = psnr_masked(s.ref, warped, mask);
  row.ssim = ssim_masked(s.ref, warped, mask);
  return row;
}

}  // namespace

EvalReport summarize(std::vector<EvalRow> rows) {
  EvalReport report;
  report.rows = std::move(rows);
  for (const EvalRow& r : report.rows) {
    BucketAverage& b = report.buckets[r.difficulty];
    ++b.count;
    b.psnr += r.psnr;
    b.ssim += r.ssim;
    ++report.overall.count;
    report.overall.psnr += r.psnr;
    report.overall.ssim += r.ssim;
  }
  for (auto& [d, b] : report.buckets) {
    b.psnr /= static_cast<double>(b.count);
    b.ssim /= static_cast<double>(b.count);
  }
  if (report.overall.count > 0) {
    report.overall.psnr /= static_cast<double>(report.overall.count);
    report.overall.ssim /= static_cast<double>(report.overall.count);
  }
  return report;
}

EvalReport evaluate(const AlignModel& model, const Dataset& data,
                    const std::optional<std::filesystem::path>& fusion_dir) {
  if (fusion_dir) std::filesystem::create_directories(*fusion_dir);
  for (const Sample& s : data)
    if (s.ref.height != model.config.image_h || s.ref.width != model.config.image_w)
      throw std::invalid_argument("evaluate: pair " + s.id + " does not match the model image size");
  // pairs in parallel; rows stay in dataset order
  std::vector<EvalRow> rows(data.size());
  std::vector<std::exception_ptr> errors(data.size());
  parallel_for(
      data.size(),
      [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
          try {
            const Alignment a = align_pair(model, data[i].ref, data[i].tar);
            rows[i] = score(data[i], a.warped, a.mask);
            if (fusion_dir) save_image(a.fused, *fusion_dir / (data[i].id + "_fused.png"));
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      },
      1);
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return summarize(std::move(rows));
}

EvalReport evaluate_identity(const Dataset& data) {
  std::vector<EvalRow> rows;
  for (const Sample& s : data) rows.push_back(score(s, s.tar, Mask(s.ref.height, s.ref.width, 1.0)));
  return summarize(std::move(rows));
}

void write_report(const EvalReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write report " + path.string());
  out.precision(10);
  out << "id,difficulty,psnr,ssim\n";
  for (const EvalRow& r : report.rows)
    out << r.id << ',' << to_string(r.difficulty) << ',' << r.psnr << ',' << r.ssim << '\n';
  for (const auto& [d, b] : report.buckets)
    out << to_string(d) << ",bucket," << b.psnr << ',' << b.ssim << '\n';
  out << "average,all," << report.overall.psnr << ',' << report.overall.ssim << '\n';
}

}  // namespace meshalign
