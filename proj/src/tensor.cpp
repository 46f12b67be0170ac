#include "ddf2pol/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "ddf2pol/errors.hpp"
#include "gemm.hpp"

namespace ddf2pol {

namespace {

std::atomic<std::uint64_t> next_node_id{1};
thread_local bool recording = true;


std::vector<std::size_t> row_major_strides(const std::vector<std::size_t>& dims) {
  std::vector<std::size_t> strides(dims.size(), 1);
  for (std::size_t i = dims.size(); i-- > 1;) strides[i - 1] = strides[i] * dims[i];
  return strides;
}

// Strides of `in` viewed through the broadcast output shape `out`; zero on stretched axes.
std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
  const std::size_t offset = out.rank() - in.rank();
  const auto own = row_major_strides(in.dims());
  std::vector<std::size_t> strides(out.rank(), 0);
  for (std::size_t i = 0; i < in.rank(); ++i) {
    strides[offset + i] = in[i] == 1 ? 0 : own[i];
  }
  return strides;
}

// Calls f(out_index, a_index, b_index) for every element of `out`.
template <class F>
void walk_broadcast(const Shape& out, const std::vector<std::size_t>& sa,
                    const std::vector<std::size_t>& sb, F&& f) {
  const std::size_t n = out.numel();
  const std::size_t rank = out.rank();
  if (rank == 0) {
    f(0, 0, 0);
    return;
  }
  const std::size_t inner = out[rank - 1];
  const std::size_t ia = sa[rank - 1];
  const std::size_t ib = sb[rank - 1];
  std::vector<std::size_t> coord(rank, 0);
  std::size_t base_a = 0;
  std::size_t base_b = 0;
  for (std::size_t o = 0; o < n; o += inner) {
    for (std::size_t k = 0; k < inner; ++k) f(o + k, base_a + k * ia, base_b + k * ib);
    // advance the outer odometer
    for (std::size_t ax = rank - 1; ax-- > 0;) {
      ++coord[ax];
      base_a += sa[ax];
      base_b += sb[ax];
      if (coord[ax] < out[ax]) break;
      base_a -= sa[ax] * coord[ax];
      base_b -= sb[ax] * coord[ax];
      coord[ax] = 0;
    }
  }
}

enum class BinaryKind { kAdd, kSub, kMul };

Tensor binary(const Tensor& a, const Tensor& b, BinaryKind kind) {
  const Shape out = broadcast_shape(a.shape(), b.shape());
  std::vector<double> values(out.numel());
  const auto av = a.values();
  const auto bv = b.values();
  const bool same = a.shape() == b.shape();
  auto apply = [kind](double x, double y) {
    switch (kind) {
      case BinaryKind::kAdd: return x + y;
      case BinaryKind::kSub: return x - y;
      case BinaryKind::kMul: return x * y;
    }
    return 0.0;
  };
  std::vector<std::size_t> sa, sb;
  if (same) {
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = apply(av[i], bv[i]);
  } else {
    sa = broadcast_strides(a.shape(), out);
    sb = broadcast_strides(b.shape(), out);
    walk_broadcast(out, sa, sb, [&](std::size_t o, std::size_t i, std::size_t j) {
      values[o] = apply(av[i], bv[j]);
    });
  }
  auto pa = a.handle();
  auto pb = b.handle();
  return Tensor::make_result(
      out, std::move(values), {a, b},
      [pa, pb, kind, same, out, sa, sb](detail::Node& self) {
        const auto& g = self.grad;
        const double sign_b = kind == BinaryKind::kSub ? -1.0 : 1.0;
        std::vector<double>* ga = pa->requires_grad ? &pa->ensure_grad() : nullptr;
        std::vector<double>* gb = pb->requires_grad ? &pb->ensure_grad() : nullptr;
        const auto& av = pa->value;
        const auto& bv = pb->value;
        auto step = [&](std::size_t o, std::size_t i, std::size_t j) {
          if (kind == BinaryKind::kMul) {
            if (ga) (*ga)[i] += g[o] * bv[j];
            if (gb) (*gb)[j] += g[o] * av[i];
          } else {
            if (ga) (*ga)[i] += g[o];
            if (gb) (*gb)[j] += sign_b * g[o];
          }
        };
        if (same) {
          for (std::size_t i = 0; i < g.size(); ++i) step(i, i, i);
        } else {
          walk_broadcast(out, sa, sb, step);
        }
      });
}

template <class Fwd, class Deriv>
Tensor unary(const Tensor& a, Fwd fwd, Deriv deriv) {
  const auto av = a.values();
  std::vector<double> values(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) values[i] = fwd(av[i]);
  auto pa = a.handle();
  return Tensor::make_result(a.shape(), std::move(values), {a},
                             [pa, deriv](detail::Node& self) {
                               auto& ga = pa->ensure_grad();
                               for (std::size_t i = 0; i < ga.size(); ++i) {
                                 ga[i] += self.grad[i] * deriv(pa->value[i], self.value[i]);
                               }
                             });
}

}  // namespace

Shape::Shape(std::initializer_list<std::size_t> dims) : Shape(std::vector<std::size_t>(dims)) {}

Shape::Shape(std::vector<std::size_t> dims) : dims_(std::move(dims)) {
  for (auto d : dims_) {
    if (d == 0) throw ShapeError("shape extents must be >= 1, got " + str());
  }
}

std::size_t Shape::numel() const {
  return std::accumulate(dims_.begin(), dims_.end(), std::size_t{1}, std::multiplies<>());
}

std::string Shape::str() const {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < dims_.size(); ++i) os << (i ? "," : "") << dims_[i];
  os << ')';
  return os.str();
}

std::vector<double>& detail::Node::ensure_grad() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  if (values.size() != shape.numel()) {
    throw ShapeError("tensor of shape " + shape.str() + " needs " +
                     std::to_string(shape.numel()) + " values, got " +
                     std::to_string(values.size()));
  }
  node_ = std::make_shared<detail::Node>();
  node_->id = next_node_id.fetch_add(1);
  node_->shape = std::move(shape);
  node_->value = std::move(values);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  return full(shape, 0.0, requires_grad);
}

Tensor Tensor::full(const Shape& shape, double v, bool requires_grad) {
  return Tensor(shape, std::vector<double>(shape.numel(), v), requires_grad);
}

void Tensor::zero_grad() { node_->grad.clear(); }

double Tensor::item() const {
  if (numel() != 1) throw UsageError("item() on tensor of shape " + shape().str());
  return node_->value[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  const auto& dims = shape().dims();
  if (index.size() != dims.size()) throw UsageError("index rank mismatch for " + shape().str());
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= dims[axis]) throw UsageError("index out of range for " + shape().str());
    flat = flat * dims[axis] + i;
    ++axis;
  }
  return node_->value[flat];
}

Tensor Tensor::detach() const { return Tensor(shape(), node_->value, false); }

Tensor Tensor::make_result(Shape shape, std::vector<double> values, std::vector<Tensor> parents,
                           std::function<void(detail::Node&)> backward) {
  Tensor out(std::move(shape), std::move(values), false);
  if (!recording) return out;
  const bool any = std::any_of(parents.begin(), parents.end(),
                               [](const Tensor& p) { return p.requires_grad(); });
  if (!any) return out;
  out.node_->requires_grad = true;
  out.node_->backward = std::move(backward);
  out.node_->parents.reserve(parents.size());
  for (auto& p : parents) out.node_->parents.push_back(p.node_);
  return out;
}

ComplexPair::ComplexPair(Tensor re_part, Tensor im_part)
    : re(std::move(re_part)), im(std::move(im_part)) {
  if (re.shape() != im.shape()) {
    throw ShapeError("complex parts differ in shape: " + re.shape().str() + " vs " +
                     im.shape().str());
  }
}

NoGradGuard::NoGradGuard() : previous_(recording) { recording = false; }
NoGradGuard::~NoGradGuard() { recording = previous_; }
bool grad_enabled() { return recording; }

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.rank(), b.rank());
  std::vector<std::size_t> dims(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < rank - a.rank() ? 1 : a[i - (rank - a.rank())];
    const std::size_t db = i < rank - b.rank() ? 1 : b[i - (rank - b.rank())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("cannot broadcast " + a.str() + " with " + b.str());
    }
    dims[i] = std::max(da, db);
  }
  return Shape(std::move(dims));
}

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::kAdd); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::kSub); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::kMul); }

Tensor relu(const Tensor& a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor negate(const Tensor& a) {
  return unary(a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Tensor scale(const Tensor& a, double c) {
  return unary(a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Tensor reshape(const Tensor& a, const Shape& shape) {
  if (shape.numel() != a.numel()) {
    throw ShapeError("cannot reshape " + a.shape().str() + " to " + shape.str());
  }
  auto pa = a.handle();
  return Tensor::make_result(shape, std::vector<double>(a.values().begin(), a.values().end()),
                             {a}, [pa](detail::Node& self) {
                               auto& ga = pa->ensure_grad();
                               for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
                             });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw UsageError("concat of zero tensors");
  const Shape& first = parts.front().shape();
  if (axis >= first.rank()) throw ShapeError("concat axis out of range for " + first.str());
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.rank() == first.rank();
    for (std::size_t i = 0; ok && i < s.rank(); ++i) ok = i == axis || s[i] == first[i];
    if (!ok) throw ShapeError("concat mismatch: " + first.str() + " vs " + s.str());
    total += s[axis];
  }
  auto dims = first.dims();
  dims[axis] = total;
  const Shape out(dims);
  std::size_t outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < first.rank(); ++i) inner *= first[i];

  std::vector<double> values(out.numel());
  std::vector<std::size_t> offsets;  // start of each part along `axis`
  std::vector<std::size_t> widths;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    widths.push_back(p.shape()[axis]);
    offset += p.shape()[axis];
  }
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto src = parts[k].values();
    const std::size_t chunk = widths[k] * inner;
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(src.begin() + o * chunk, chunk,
                  values.begin() + o * total * inner + offsets[k] * inner);
    }
  }
  std::vector<std::shared_ptr<detail::Node>> handles;
  for (const auto& p : parts) handles.push_back(p.handle());
  return Tensor::make_result(
      out, std::move(values), std::vector<Tensor>(parts.begin(), parts.end()),
      [handles, offsets, widths, outer, inner, total](detail::Node& self) {
        for (std::size_t k = 0; k < handles.size(); ++k) {
          if (!handles[k]->requires_grad) continue;
          auto& g = handles[k]->ensure_grad();
          const std::size_t chunk = widths[k] * inner;
          for (std::size_t o = 0; o < outer; ++o) {
            const double* src = self.grad.data() + o * total * inner + offsets[k] * inner;
            double* dst = g.data() + o * chunk;
            for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
          }
        }
      });
}

Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& s = a.shape();
  if (axis >= s.rank() || begin >= end || end > s[axis]) {
    throw ShapeError("invalid slice [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") on axis " + std::to_string(axis) + " of " + s.str());
  }
  auto dims = s.dims();
  dims[axis] = end - begin;
  const Shape out(dims);
  std::size_t outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < s.rank(); ++i) inner *= s[i];
  const std::size_t full = s[axis] * inner;
  const std::size_t chunk = (end - begin) * inner;
  std::vector<double> values(out.numel());
  const auto src = a.values();
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(src.begin() + o * full + begin * inner, chunk, values.begin() + o * chunk);
  }
  auto pa = a.handle();
  return Tensor::make_result(out, std::move(values), {a},
                             [pa, outer, inner, full, chunk, begin](detail::Node& self) {
                               auto& g = pa->ensure_grad();
                               for (std::size_t o = 0; o < outer; ++o) {
                                 double* dst = g.data() + o * full + begin * inner;
                                 const double* src = self.grad.data() + o * chunk;
                                 for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
                               }
                             });
}

Tensor reduce_mean(const Tensor& a, std::vector<std::size_t> axes, bool keep_dims) {
  if (axes.empty()) return a;
  const Shape& s = a.shape();
  std::sort(axes.begin(), axes.end());
  axes.erase(std::unique(axes.begin(), axes.end()), axes.end());
  if (axes.back() >= s.rank()) throw ShapeError("reduce axis out of range for " + s.str());

  std::vector<std::size_t> kept = s.dims();
  std::size_t count = 1;
  for (auto ax : axes) {
    count *= s[ax];
    kept[ax] = 1;
  }
  const Shape kept_shape(kept);
  std::vector<std::size_t> out_dims;
  for (std::size_t i = 0; i < s.rank(); ++i) {
    if (keep_dims || !std::binary_search(axes.begin(), axes.end(), i)) out_dims.push_back(kept[i]);
  }
  const Shape out(out_dims);

  // Walk the input; the "b" stride maps each input element to its output slot.
  const auto in_strides = row_major_strides(s.dims());
  const auto red_strides = broadcast_strides(kept_shape, s);
  std::vector<double> values(out.numel(), 0.0);
  const auto av = a.values();
  walk_broadcast(s, in_strides, red_strides,
                 [&](std::size_t, std::size_t i, std::size_t o) { values[o] += av[i]; });
  const double inv = 1.0 / static_cast<double>(count);
  for (auto& v : values) v *= inv;

  auto pa = a.handle();
  return Tensor::make_result(
      out, std::move(values), {a}, [pa, s, in_strides, red_strides, inv](detail::Node& self) {
        auto& g = pa->ensure_grad();
        walk_broadcast(s, in_strides, red_strides, [&](std::size_t, std::size_t i, std::size_t o) {
          g[i] += self.grad[o] * inv;
        });
      });
}

Tensor sum(const Tensor& a) {
  const auto av = a.values();
  const double total = std::accumulate(av.begin(), av.end(), 0.0);
  auto pa = a.handle();
  return Tensor::make_result(Shape{}, {total}, {a}, [pa](detail::Node& self) {
    auto& g = pa->ensure_grad();
    for (auto& v : g) v += self.grad[0];
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.shape().rank() != 2 || b.shape().rank() != 2 || a.shape()[1] != b.shape()[0]) {
    throw ShapeError("matmul needs (N,K)x(K,M), got " + a.shape().str() + " x " +
                     b.shape().str());
  }
  const std::size_t n = a.shape()[0], k = a.shape()[1], m = b.shape()[1];
  std::vector<double> values(n * m);
  detail::gemm(values.data(), a.values().data(), false, b.values().data(), false, n, k, m, false);
  auto pa = a.handle();
  auto pb = b.handle();
  return Tensor::make_result(Shape{n, m}, std::move(values), {a, b},
                             [pa, pb, n, k, m](detail::Node& self) {
                               if (pa->requires_grad) {
                                 detail::gemm(pa->ensure_grad().data(), self.grad.data(), false,
                                              pb->value.data(), true, n, m, k, true);
                               }
                               if (pb->requires_grad) {
                                 detail::gemm(pb->ensure_grad().data(), pa->value.data(), true,
                                              self.grad.data(), false, k, n, m, true);
                               }
                             });
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw UsageError("backward needs a one-element loss, got " +
                     (loss.defined() ? loss.shape().str() : std::string("undefined")));
  }
  if (!loss.requires_grad()) return;

  // Shared owners: clearing a node's parents below must not free nodes still queued.
  std::vector<std::shared_ptr<detail::Node>> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::shared_ptr<detail::Node>> stack{loss.handle()};
  seen.insert(loss.node());
  while (!stack.empty()) {
    auto n = std::move(stack.back());
    stack.pop_back();
    for (auto& p : n->parents) {
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p);
    }
    order.push_back(std::move(n));
  }
  std::sort(order.begin(), order.end(),
            [](const auto& x, const auto& y) { return x->id > y->id; });

  loss.node()->ensure_grad()[0] += 1.0;
  for (const auto& n : order) {
    if (!n->backward) continue;  // leaf
    if (!n->grad.empty()) n->backward(*n);
    // Intermediate results are spent once their rule has run.
    n->backward = nullptr;
    n->parents.clear();
    n->grad.clear();
    n->grad.shrink_to_fit();
  }
}

}  // namespace ddf2pol
