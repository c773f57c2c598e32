#include "axmlp/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <mutex>
#include <unordered_map>
#include <sstream>
#include <unordered_set>

#include "axmlp/errors.hpp"

namespace axmlp {

namespace {

std::atomic<std::size_t> g_live_bytes{0};
std::atomic<std::size_t> g_peak_bytes{0};

void track_alloc(std::size_t bytes) {
  const std::size_t now = g_live_bytes.fetch_add(bytes) + bytes;
  std::size_t peak = g_peak_bytes.load();
  while (now > peak && !g_peak_bytes.compare_exchange_weak(peak, now)) {
  }
}

}  // namespace

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

// Released data buffers, keyed by element count. Training allocates the same
// shapes every step, so reuse skips the page faults of fresh allocations.
class BufferPool {
 public:
  static BufferPool& instance() {
    static auto* pool = new BufferPool;  // intentionally leaked: buffers may outlive static destruction
    return *pool;
  }

  bool take(std::size_t n, std::vector<double>& out) {
    if (n < kMinElements) return false;
    std::lock_guard lock(mu_);
    auto it = free_.find(n);
    if (it == free_.end() || it->second.empty()) return false;
    out = std::move(it->second.back());
    it->second.pop_back();
    bytes_ -= n * sizeof(double);
    return true;
  }

  void give(std::vector<double>&& v) {
    const std::size_t n = v.size();
    if (n < kMinElements) return;
    std::lock_guard lock(mu_);
    if (bytes_ + n * sizeof(double) > kCapBytes) return;
    bytes_ += n * sizeof(double);
    free_[n].push_back(std::move(v));
  }

 private:
  static constexpr std::size_t kMinElements = 1 << 14;
  static constexpr std::size_t kCapBytes = std::size_t{1} << 30;
  std::mutex mu_;
  std::unordered_map<std::size_t, std::vector<std::vector<double>>> free_;
  std::size_t bytes_ = 0;
};

struct Buffer {
  std::vector<double> values;
  explicit Buffer(std::vector<double> v) : values(std::move(v)) { track_alloc(values.size() * sizeof(double)); }
  ~Buffer() {
    g_live_bytes.fetch_sub(values.size() * sizeof(double));
    BufferPool::instance().give(std::move(values));
  }
  Buffer(const Buffer&) = delete;
  Buffer& operator=(const Buffer&) = delete;
};

}  // namespace

struct Tensor::Impl {
  Shape shape;
  std::shared_ptr<Buffer> buffer;
  GradSlot grad;
  bool requires_grad = false;

  Impl(Shape s, std::vector<double> d, bool rg)
      : shape(std::move(s)), buffer(std::make_shared<Buffer>(std::move(d))), requires_grad(rg) {
    if (requires_grad) grad = std::make_shared<std::vector<double>>();
  }
  Impl(Shape s, std::shared_ptr<Buffer> b, GradSlot g, bool rg)
      : shape(std::move(s)), buffer(std::move(b)), grad(std::move(g)), requires_grad(rg) {}
};

MemoryStats memory_stats() { return {g_live_bytes.load(), g_peak_bytes.load()}; }
void reset_peak_memory() { g_peak_bytes.store(g_live_bytes.load()); }

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return filled(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::filled(Shape shape, double value, bool requires_grad) {
  Tensor t = empty(std::move(shape), requires_grad);
  std::fill(t.impl_->buffer->values.begin(), t.impl_->buffer->values.end(), value);
  return t;
}

Tensor Tensor::empty(Shape shape, bool requires_grad) {
  for (auto d : shape)
    if (d == 0) throw DimensionError("tensor extents must be positive, got " + shape_string(shape));
  const auto n = shape_size(shape);
  std::vector<double> values;
  if (!BufferPool::instance().take(n, values)) values.resize(n);
  return Tensor(std::make_shared<Impl>(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  for (auto d : shape)
    if (d == 0) throw DimensionError("tensor extents must be positive, got " + shape_string(shape));
  if (shape_size(shape) != values.size())
    throw DimensionError("shape " + shape_string(shape) + " does not match " + std::to_string(values.size()) +
                         " values");
  return Tensor(std::make_shared<Impl>(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({1}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return impl_->shape; }
std::size_t Tensor::size() const { return impl_->buffer->values.size(); }
std::span<double> Tensor::data() { return impl_->buffer->values; }
std::span<const double> Tensor::data() const { return impl_->buffer->values; }

double Tensor::item() const {
  if (size() != 1) throw ContractError("item() on tensor of shape " + shape_string(shape()));
  return impl_->buffer->values[0];
}

bool Tensor::requires_grad() const { return impl_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  if (on && !impl_->grad) impl_->grad = std::make_shared<std::vector<double>>();
}

bool Tensor::has_grad() const { return impl_->grad && !impl_->grad->empty(); }

std::span<double> Tensor::grad() {
  if (!impl_->grad) impl_->grad = std::make_shared<std::vector<double>>();
  if (impl_->grad->empty()) impl_->grad->assign(size(), 0.0);
  return *impl_->grad;
}

std::span<const double> Tensor::grad() const { return const_cast<Tensor*>(this)->grad(); }

void Tensor::zero_grad() {
  if (impl_->grad) std::fill(impl_->grad->begin(), impl_->grad->end(), 0.0);
}

const GradSlot& Tensor::grad_slot() const { return impl_->grad; }

bool Tensor::same_storage(const Tensor& other) const noexcept {
  return impl_ && other.impl_ && impl_->buffer == other.impl_->buffer;
}

Tensor Tensor::clone() const {
  return Tensor(std::make_shared<Impl>(impl_->shape, impl_->buffer->values, impl_->requires_grad));
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != size())
    throw DimensionError("cannot reshape " + shape_string(this->shape()) + " to " + shape_string(shape));
  if (!impl_->grad && impl_->requires_grad) impl_->grad = std::make_shared<std::vector<double>>();
  return Tensor(std::make_shared<Impl>(std::move(shape), impl_->buffer, impl_->grad, impl_->requires_grad));
}

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::LinearAlongAxis: return "linear_along_axis";
    case OpKind::LinearChannels: return "linear_channels";
    case OpKind::LeakyRelu: return "leaky_relu";
    case OpKind::NormalizeGlobal: return "normalize_global";
    case OpKind::DropoutAxial: return "dropout_axial";
    case OpKind::TrilinearResize: return "trilinear_resize";
    case OpKind::Patchify: return "patchify";
    case OpKind::Unpatchify: return "unpatchify";
    case OpKind::Add: return "add";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Scale: return "scale";
    case OpKind::Square: return "square";
    case OpKind::Sum: return "sum";
    case OpKind::SoftDiceLoss: return "soft_dice_loss";
    case OpKind::AxialBranch: return "axial_branch";
  }
  return "?";
}

void Tape::record(TapeNode node) { nodes_.push_back(std::move(node)); }

void Tape::backward(const Tensor& loss, BackwardOptions options) {
  if (!loss.defined() || loss.size() != 1)
    throw ContractError("backward requires a scalar loss, got shape " +
                        (loss.defined() ? shape_string(loss.shape()) : std::string("<undefined>")));
  if (!loss.requires_grad()) throw ContractError("loss does not depend on any requires-grad tensor");

  // Intermediate gradients restart at zero; leaves keep accumulating.
  std::unordered_set<const std::vector<double>*> produced;
  for (auto& node : nodes_) {
    if (node.output) {
      node.output->clear();
      produced.insert(node.output.get());
    }
  }
  const auto& slot = loss.grad_slot();
  if (!produced.count(slot.get())) {
    // Leaf loss: d loss / d loss.
    if (slot->empty()) slot->assign(1, 0.0);
    (*slot)[0] += 1.0;
    return;
  }
  slot->assign(1, 1.0);

  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->output && !it->output->empty()) it->backward();
    if (!options.retain_intermediate && it->output) {
      it->output->clear();
      it->output->shrink_to_fit();
    }
  }
}

}  // namespace axmlp
