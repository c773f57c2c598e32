#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace axmlp {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Shared gradient buffer. Empty means "zero so far"; it is sized on first write.
using GradSlot = std::shared_ptr<std::vector<double>>;

/// Dense row-major N-D array of doubles with an optional gradient.
///
/// Tensor is a cheap handle: copies share storage. Use `clone()` for a deep copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor filled(Shape shape, double value, bool requires_grad = false);
  /// Contents unspecified; for outputs that are overwritten in full.
  static Tensor empty(Shape shape, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim(std::size_t i) const { return shape().at(i); }
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;

  std::span<double> data();
  std::span<const double> data() const;
  double item() const;

  bool requires_grad() const;
  void set_requires_grad(bool on);

  /// True once something has been accumulated into the gradient.
  bool has_grad() const;
  /// Gradient view; allocates a zero buffer when none exists yet.
  std::span<double> grad();
  std::span<const double> grad() const;
  void zero_grad();
  const GradSlot& grad_slot() const;

  Tensor clone() const;
  /// Same storage, new shape with equal element count.
  Tensor reshaped(Shape shape) const;

  bool same_storage(const Tensor& other) const noexcept;

 private:
  struct Impl;
  explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<Impl> impl_;
};

/// Bytes currently held by tensor data buffers, and the high-water mark.
struct MemoryStats {
  std::size_t live_bytes = 0;
  std::size_t peak_bytes = 0;
};
MemoryStats memory_stats();
void reset_peak_memory();

enum class OpKind {
  LinearAlongAxis,
  LinearChannels,
  LeakyRelu,
  NormalizeGlobal,
  DropoutAxial,
  TrilinearResize,
  Patchify,
  Unpatchify,
  Add,
  Sigmoid,
  Scale,
  Square,
  Sum,
  SoftDiceLoss,
  AxialBranch,
};

const char* op_name(OpKind kind);

struct TapeNode {
  OpKind kind;
  std::vector<GradSlot> inputs;  // null entries for inputs that need no gradient
  GradSlot output;
  std::function<void()> backward;
};

struct BackwardOptions {
  /// Keep gradients of intermediate tensors after the pass. Training turns this
  /// off to release memory as soon as a node has propagated.
  bool retain_intermediate = true;
};

/// Records differentiable ops in construction order and replays them in reverse.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  void record(TapeNode node);
  std::size_t size() const noexcept { return nodes_.size(); }
  const std::vector<TapeNode>& nodes() const noexcept { return nodes_; }
  void clear() { nodes_.clear(); }

  /// Accumulates d(loss)/dT into every requires-grad leaf reachable on the tape.
  /// Intermediate gradients are recomputed from scratch on each call, so
  /// repeated calls add to leaf gradients exactly once per call.
  void backward(const Tensor& loss, BackwardOptions options = {});

 private:
  std::vector<TapeNode> nodes_;
};

}  // namespace axmlp
