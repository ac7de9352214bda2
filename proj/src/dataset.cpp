#include "cbn/dataset.hpp"

#include <fstream>
#include <iterator>

#include "cbn/errors.hpp"

namespace cbn {

Tensor Dataset::image_tensor(std::size_t i) const {
  const auto img = image(i);
  return Tensor(image_shape, std::vector<double>(img.begin(), img.end()));
}

namespace {

std::uint32_t read_be32(std::span<const std::uint8_t> data, std::size_t offset) {
  if (offset + 4 > data.size()) throw FormatError("file truncated inside header", data.size());
  return (std::uint32_t{data[offset]} << 24) | (std::uint32_t{data[offset + 1]} << 16) |
         (std::uint32_t{data[offset + 2]} << 8) | std::uint32_t{data[offset + 3]};
}

}  // namespace

IdxImages parse_idx_images(std::span<const std::uint8_t> data) {
  const std::uint32_t magic = read_be32(data, 0);
  if (magic != 0x00000803) throw FormatError("bad IDX image magic", 0);
  IdxImages out;
  out.count = read_be32(data, 4);
  out.rows = read_be32(data, 8);
  out.cols = read_be32(data, 12);
  const std::size_t need = out.count * out.rows * out.cols;
  if (data.size() - 16 < need) throw FormatError("IDX image payload truncated", data.size());
  out.bytes.assign(data.begin() + 16, data.begin() + 16 + static_cast<std::ptrdiff_t>(need));
  return out;
}

std::vector<std::uint8_t> parse_idx_labels(std::span<const std::uint8_t> data) {
  const std::uint32_t magic = read_be32(data, 0);
  if (magic != 0x00000801) throw FormatError("bad IDX label magic", 0);
  const std::size_t count = read_be32(data, 4);
  if (data.size() - 8 < count) throw FormatError("IDX label payload truncated", data.size());
  return {data.begin() + 8, data.begin() + 8 + static_cast<std::ptrdiff_t>(count)};
}

CifarRecords parse_cifar_records(std::span<const std::uint8_t> data) {
  constexpr std::size_t record = 3073;
  if (data.size() % record != 0) {
    throw FormatError("CIFAR-10 data is not a whole number of 3073-byte records", data.size() - data.size() % record);
  }
  CifarRecords out;
  const std::size_t n = data.size() / record;
  out.labels.reserve(n);
  out.pixels.reserve(n * 3072);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t base = i * record;
    if (data[base] > 9) throw FormatError("CIFAR-10 label out of range", base);
    out.labels.push_back(data[base]);
    out.pixels.insert(out.pixels.end(), data.begin() + static_cast<std::ptrdiff_t>(base + 1),
                      data.begin() + static_cast<std::ptrdiff_t>(base + record));
  }
  return out;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

namespace {

Dataset from_bytes(const std::vector<std::uint8_t>& pixels, const std::vector<std::uint8_t>& labels, Shape shape,
                   std::size_t subset, std::size_t classes) {
  const std::size_t per = shape_size(shape);
  std::size_t n = labels.size();
  if (subset > 0 && subset < n) n = subset;
  Dataset d;
  d.image_shape = std::move(shape);
  d.classes = classes;
  d.pixels.resize(n * per);
  d.labels.resize(n);
  for (std::size_t i = 0; i < n * per; ++i) d.pixels[i] = pixels[i] / 255.0;
  for (std::size_t i = 0; i < n; ++i) d.labels[i] = labels[i];
  return d;
}

void downsample(Dataset& d, std::size_t f) {
  if (f <= 1) return;
  const std::size_t c = d.image_shape[0], h = d.image_shape[1], w = d.image_shape[2];
  const std::size_t oh = h / f, ow = w / f;
  if (oh == 0 || ow == 0) throw ArgumentError("downsample factor larger than the image");
  std::vector<double> out(d.size() * c * oh * ow);
  const double inv = 1.0 / static_cast<double>(f * f);
  for (std::size_t i = 0; i < d.size(); ++i)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
          double acc = 0.0;
          for (std::size_t a = 0; a < f; ++a)
            for (std::size_t b = 0; b < f; ++b) acc += d.pixels[((i * c + ch) * h + y * f + a) * w + x * f + b];
          out[((i * c + ch) * oh + y) * ow + x] = acc * inv;
        }
  d.pixels = std::move(out);
  d.image_shape = {c, oh, ow};
}

void standardize(Dataset& d, double mean, double stddev) {
  for (double& v : d.pixels) v = (v - mean) / stddev;
}

Dataset synthetic(const DatasetSpec& s, std::size_t count, Rng& rng, const std::vector<double>& centers) {
  Dataset d;
  d.image_shape = Shape(s.image_shape.begin(), s.image_shape.end());
  d.classes = s.classes;
  const std::size_t per = shape_size(d.image_shape);
  d.pixels.resize(count * per);
  d.labels.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t label = i % s.classes;
    d.labels[i] = static_cast<int>(label);
    for (std::size_t p = 0; p < per; ++p) d.pixels[i * per + p] = centers[label * per + p] + s.noise * rng.normal();
  }
  return d;
}

}  // namespace

std::pair<Dataset, Dataset> load_dataset(const DatasetSpec& spec) {
  Dataset train, eval;
  if (spec.kind == "mnist-idx") {
    const std::filesystem::path dir(spec.path);
    auto load = [&](const std::string& prefix, std::size_t subset) {
      const auto img_path = dir / (prefix + "-images-idx3-ubyte");
      const auto lab_path = dir / (prefix + "-labels-idx1-ubyte");
      IdxImages imgs;
      std::vector<std::uint8_t> labs;
      try {
        imgs = parse_idx_images(read_file(img_path));
      } catch (const FormatError& e) {
        throw FormatError(img_path.string() + ": " + e.detail(), e.offset());
      }
      try {
        labs = parse_idx_labels(read_file(lab_path));
      } catch (const FormatError& e) {
        throw FormatError(lab_path.string() + ": " + e.detail(), e.offset());
      }
      if (labs.size() != imgs.count) throw FormatError(lab_path.string() + ": label count differs from image count", 4);
      return from_bytes(imgs.bytes, labs, {1, imgs.rows, imgs.cols}, subset, 10);
    };
    train = load("train", spec.train_subset);
    eval = load("t10k", spec.eval_subset);
  } else if (spec.kind == "cifar10-bin") {
    const std::filesystem::path dir(spec.path);
    CifarRecords tr;
    for (int b = 1; b <= 5; ++b) {
      const auto p = dir / ("data_batch_" + std::to_string(b) + ".bin");
      if (!std::filesystem::exists(p)) continue;
      auto r = parse_cifar_records(read_file(p));
      tr.labels.insert(tr.labels.end(), r.labels.begin(), r.labels.end());
      tr.pixels.insert(tr.pixels.end(), r.pixels.begin(), r.pixels.end());
    }
    if (tr.labels.empty()) throw std::runtime_error("no CIFAR-10 training batches under " + dir.string());
    const auto te = parse_cifar_records(read_file(dir / "test_batch.bin"));
    train = from_bytes(tr.pixels, tr.labels, {3, 32, 32}, spec.train_subset, 10);
    eval = from_bytes(te.pixels, te.labels, {3, 32, 32}, spec.eval_subset, 10);
  } else if (spec.kind == "synthetic-gaussian") {
    if (spec.classes < 2 || spec.image_shape.size() != 3 || shape_size(Shape(spec.image_shape.begin(), spec.image_shape.end())) == 0) {
      throw ArgumentError("synthetic-gaussian needs classes >= 2 and a C x H x W image_shape");
    }
    Rng rng(spec.data_seed);
    const std::size_t per = shape_size(Shape(spec.image_shape.begin(), spec.image_shape.end()));
    std::vector<double> centers(spec.classes * per);
    for (double& v : centers) v = rng.normal();
    train = synthetic(spec, spec.train_size, rng, centers);
    eval = synthetic(spec, spec.eval_size, rng, centers);
    standardize(train, spec.mean, spec.stddev);
    standardize(eval, spec.mean, spec.stddev);
    return {std::move(train), std::move(eval)};
  } else {
    throw ArgumentError("unknown dataset kind '" + spec.kind + "'");
  }
  downsample(train, spec.downsample);
  downsample(eval, spec.downsample);
  standardize(train, spec.mean, spec.stddev);
  standardize(eval, spec.mean, spec.stddev);
  return {std::move(train), std::move(eval)};
}

Tensor make_batch(const Dataset& data, std::span<const std::size_t> indices, const DatasetSpec& spec, bool augment,
                  Rng& rng) {
  Shape shape{indices.size()};
  shape.insert(shape.end(), data.image_shape.begin(), data.image_shape.end());
  Tensor batch(shape);
  const std::size_t per = data.image_size();
  const std::size_t c = data.image_shape[0], h = data.image_shape[1], w = data.image_shape[2];
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const auto img = data.image(indices[b]);
    double* out = batch.data().data() + b * per;
    if (!augment || (!spec.flip && spec.crop_padding == 0)) {
      std::copy(img.begin(), img.end(), out);
      continue;
    }
    const bool flip = spec.flip && rng.uniform() < 0.5;
    long dy = 0, dx = 0;
    if (spec.crop_padding > 0) {
      const auto span = 2 * spec.crop_padding + 1;
      dy = static_cast<long>(rng.below(span)) - static_cast<long>(spec.crop_padding);
      dx = static_cast<long>(rng.below(span)) - static_cast<long>(spec.crop_padding);
    }
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          const long sy = static_cast<long>(y) + dy;
          const long sx0 = static_cast<long>(flip ? w - 1 - x : x) + dx;
          double v = 0.0;
          if (sy >= 0 && sy < static_cast<long>(h) && sx0 >= 0 && sx0 < static_cast<long>(w)) {
            v = img[(ch * h + static_cast<std::size_t>(sy)) * w + static_cast<std::size_t>(sx0)];
          }
          out[(ch * h + y) * w + x] = v;
        }
  }
  return batch;
}

std::vector<int> batch_labels(const Dataset& data, std::span<const std::size_t> indices) {
  std::vector<int> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(data.labels[i]);
  return out;
}

}  // namespace cbn
