#include "cbn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "cbn/dataset.hpp"
#include "cbn/errors.hpp"

namespace cbn {

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes a little-endian host");

namespace {

class Writer {
 public:
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u64(std::uint64_t v) { raw(&v, sizeof v); }
  void f64(double v) { raw(&v, sizeof v); }
  void str(const std::string& s) {
    u64(s.size());
    raw(s.data(), s.size());
  }
  void doubles(const std::vector<double>& v) {
    u64(v.size());
    raw(v.data(), v.size() * sizeof(double));
  }
  void tensor(const Tensor& t) {
    u64(t.rank());
    for (std::size_t d : t.shape()) u64(d);
    raw(t.data().data(), t.size() * sizeof(double));
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& in) : in_(in) {}

  void raw(void* p, std::size_t n) {
    if (n > in_.size() - pos_) throw FormatError("checkpoint truncated", pos_);
    std::memcpy(p, in_.data() + pos_, n);
    pos_ += n;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    raw(&v, sizeof v);
    return v;
  }
  double f64() {
    double v;
    raw(&v, sizeof v);
    return v;
  }
  std::uint64_t count(std::size_t elem_size) {
    const std::size_t at = pos_;
    const std::uint64_t n = u64();
    if (elem_size > 0 && n > (in_.size() - pos_) / elem_size) throw FormatError("checkpoint length field too large", at);
    return n;
  }
  std::string str() {
    std::string s(count(1), '\0');
    raw(s.data(), s.size());
    return s;
  }
  std::vector<double> doubles() {
    std::vector<double> v(count(sizeof(double)));
    raw(v.data(), v.size() * sizeof(double));
    return v;
  }
  Tensor tensor() {
    const std::size_t at = pos_;
    const std::uint64_t rank = count(sizeof(std::uint64_t));
    Shape shape(rank);
    for (auto& d : shape) d = u64();
    const std::size_t n = shape_size(shape);
    if (rank > 0 && n > (in_.size() - pos_) / sizeof(double)) throw FormatError("checkpoint tensor truncated", at);
    std::vector<double> data(rank == 0 ? 0 : n);
    raw(data.data(), data.size() * sizeof(double));
    if (rank == 0) return Tensor();
    return Tensor(std::move(shape), std::move(data));
  }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == in_.size(); }

 private:
  const std::vector<std::uint8_t>& in_;
  std::size_t pos_ = 0;
};

void write_record(Writer& w, const IterationRecord& r) {
  w.u64(r.iteration);
  w.doubles(r.stats.mean);
  w.doubles(r.stats.mean_sq);
  w.tensor(r.grad_mean);
  w.tensor(r.grad_mean_sq);
  w.tensor(r.weight_snapshot);
}

IterationRecord read_record(Reader& r) {
  IterationRecord rec;
  rec.iteration = r.u64();
  rec.stats.mean = r.doubles();
  rec.stats.mean_sq = r.doubles();
  rec.grad_mean = r.tensor();
  rec.grad_mean_sq = r.tensor();
  rec.weight_snapshot = r.tensor();
  return rec;
}

}  // namespace

Checkpoint capture_checkpoint(const std::string& config_json, NetworkGraph& graph, const SgdState& sgd,
                              const Rng& rng, const TrainProgress& progress, const std::vector<MetricsRow>& rows) {
  Checkpoint c;
  c.config_json = config_json;
  c.progress = progress;
  c.rng = rng.state();
  for (const auto& p : parameters(graph)) c.params.push_back(*p.tensor);
  c.velocity = sgd.velocity;
  for (std::size_t l = 0; l < graph.layers.size(); ++l) {
    if (!graph.norms[l]) continue;
    const CbnState& s = *graph.norms[l];
    NormSnapshot n;
    n.layer = l;
    n.iteration = s.iteration;
    n.has_running_stats = s.has_running_stats;
    n.running_mean = s.running_mean;
    n.running_var = s.running_var;
    for (const auto& r : s.records) n.records.push_back(*r);
    c.norms.push_back(std::move(n));
  }
  c.rows = rows;
  return c;
}

void restore_checkpoint(const Checkpoint& c, NetworkGraph& graph, SgdState& sgd) {
  auto params = parameters(graph);
  if (params.size() != c.params.size() || sgd.velocity.size() != c.velocity.size()) {
    throw StateError("checkpoint parameter count does not match the network");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].tensor->shape() != c.params[i].shape() || c.velocity[i].shape() != c.params[i].shape()) {
      throw StateError("checkpoint parameter " + std::to_string(i) + " has a different shape");
    }
    *params[i].tensor = c.params[i];
    sgd.velocity[i] = c.velocity[i];
  }
  for (const auto& n : c.norms) {
    if (n.layer >= graph.layers.size() || !graph.norms[n.layer]) throw StateError("checkpoint normalizer layer mismatch");
    CbnState& s = *graph.norms[n.layer];
    if (n.running_mean.size() != s.channels() || n.records.size() + 1 > std::max<std::size_t>(s.window, 1)) {
      throw StateError("checkpoint normalizer state does not fit layer " + std::to_string(n.layer));
    }
    s.iteration = n.iteration;
    s.has_running_stats = n.has_running_stats;
    s.running_mean = n.running_mean;
    s.running_var = n.running_var;
    s.records.clear();
    for (const auto& r : n.records) s.records.push_back(std::make_shared<const IterationRecord>(r));
  }
}

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& c) {
  Writer w;
  w.raw(kCheckpointMagic, sizeof kCheckpointMagic);
  const std::uint32_t version = kCheckpointVersion;
  w.raw(&version, sizeof version);
  w.str(c.config_json);

  const auto& p = c.progress;
  w.u64(p.epoch);
  w.u64(p.iter_in_epoch);
  w.u64(p.global_step);
  w.u64(p.permutation.size());
  for (auto v : p.permutation) w.u64(v);
  w.f64(p.loss_sum);
  w.u64(p.correct);
  w.u64(p.seen);
  w.f64(p.elapsed);

  for (auto word : c.rng.words) w.u64(word);
  w.u64(c.rng.has_spare ? 1 : 0);
  w.f64(c.rng.spare);

  w.u64(c.params.size());
  for (const auto& t : c.params) w.tensor(t);
  w.u64(c.velocity.size());
  for (const auto& t : c.velocity) w.tensor(t);

  w.u64(c.norms.size());
  for (const auto& n : c.norms) {
    w.u64(n.layer);
    w.u64(n.iteration);
    w.u64(n.has_running_stats ? 1 : 0);
    w.doubles(n.running_mean);
    w.doubles(n.running_var);
    w.u64(n.records.size());
    for (const auto& r : n.records) write_record(w, r);
  }

  w.u64(c.rows.size());
  for (const auto& r : c.rows) {
    w.u64(r.epoch);
    w.u64(r.iteration);
    w.str(r.split);
    w.f64(r.loss);
    w.f64(r.top1);
    w.f64(r.wall_time);
    w.u64(r.effective_window);
    w.u64(r.diag.size());
    for (const auto& [name, v] : r.diag) {
      w.str(name);
      w.f64(v);
    }
  }
  return w.take();
}

Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  char magic[8];
  r.raw(magic, sizeof magic);
  if (std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) throw FormatError("not a checkpoint (bad magic)", 0);
  std::uint32_t version = 0;
  r.raw(&version, sizeof version);
  if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version), 8);

  Checkpoint c;
  c.config_json = r.str();
  auto& p = c.progress;
  p.epoch = r.u64();
  p.iter_in_epoch = r.u64();
  p.global_step = r.u64();
  p.permutation.resize(r.count(8));
  for (auto& v : p.permutation) v = r.u64();
  p.loss_sum = r.f64();
  p.correct = r.u64();
  p.seen = r.u64();
  p.elapsed = r.f64();

  for (auto& word : c.rng.words) word = r.u64();
  c.rng.has_spare = r.u64() != 0;
  c.rng.spare = r.f64();

  c.params.resize(r.count(8));
  for (auto& t : c.params) t = r.tensor();
  c.velocity.resize(r.count(8));
  for (auto& t : c.velocity) t = r.tensor();

  c.norms.resize(r.count(8));
  for (auto& n : c.norms) {
    n.layer = r.u64();
    n.iteration = r.u64();
    n.has_running_stats = r.u64() != 0;
    n.running_mean = r.doubles();
    n.running_var = r.doubles();
    n.records.resize(r.count(8));
    for (auto& rec : n.records) rec = read_record(r);
  }

  c.rows.resize(r.count(8));
  for (auto& row : c.rows) {
    row.epoch = r.u64();
    row.iteration = r.u64();
    row.split = r.str();
    row.loss = r.f64();
    row.top1 = r.f64();
    row.wall_time = r.f64();
    row.effective_window = r.u64();
    row.diag.resize(r.count(8));
    for (auto& [name, v] : row.diag) {
      name = r.str();
      v = r.f64();
    }
  }
  if (!r.done()) throw FormatError("trailing bytes after checkpoint", r.pos());
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  try {
    return deserialize_checkpoint(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.detail(), e.offset());
  }
}

}  // namespace cbn
