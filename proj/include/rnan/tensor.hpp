#ifndef RNAN_TENSOR_HPP_
#define RNAN_TENSOR_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace rnan {

/// Raised for any shape, channel or parameter inconsistency detected before
/// computation starts.
class ConfigError : public std::invalid_argument {
public:
	using std::invalid_argument::invalid_argument;
};

/// Unreadable, unwritable or malformed files.
class IoError : public std::runtime_error {
public:
	using std::runtime_error::runtime_error;
};

struct Shape {
	std::size_t n = 0, c = 0, h = 0, w = 0;

	constexpr std::size_t size() const { return n * c * h * w; }
	constexpr std::size_t plane() const { return h * w; }
	constexpr std::size_t item() const { return c * h * w; }
	friend constexpr bool operator==(const Shape&, const Shape&) = default;
};

inline std::string to_string(const Shape& s) {
	return "(" + std::to_string(s.n) + ", " + std::to_string(s.c) + ", " + std::to_string(s.h) +
		   ", " + std::to_string(s.w) + ")";
}

/**
 * Dense (batch, channel, height, width) array, row-major with width fastest.
 *
 * Storage uses Eigen's aligned allocator so that every tensor starts on the
 * same vector boundary; this keeps the GEMM kernels' summation order, and
 * therefore the results, independent of where the allocator put the data.
 */
template<typename T>
class Tensor4 {
public:
	using value_type = T;
	using storage_type = std::vector<T, Eigen::aligned_allocator<T>>;

	Tensor4() = default;
	explicit Tensor4(Shape shape, T fill = T(0)) : shape_(shape), data_(shape.size(), fill) {}
	Tensor4(Shape shape, std::span<const T> values) : shape_(shape), data_(values.begin(), values.end()) {
		if (data_.size() != shape.size())
			throw ConfigError("tensor data length " + std::to_string(data_.size()) +
							  " does not match shape " + to_string(shape));
	}
	Tensor4(Shape shape, std::initializer_list<T> values)
		: Tensor4(shape, std::span<const T>(values.begin(), values.size())) {}

	static Tensor4 zeros_like(const Tensor4& other) { return Tensor4(other.shape()); }

	const Shape& shape() const { return shape_; }
	std::size_t n() const { return shape_.n; }
	std::size_t c() const { return shape_.c; }
	std::size_t h() const { return shape_.h; }
	std::size_t w() const { return shape_.w; }
	std::size_t size() const { return data_.size(); }
	bool empty() const { return data_.empty(); }

	T* data() { return data_.data(); }
	const T* data() const { return data_.data(); }
	std::span<T> values() { return {data_.data(), data_.size()}; }
	std::span<const T> values() const { return {data_.data(), data_.size()}; }

	/// Pointer to the first value of batch item `b`.
	T* item(std::size_t b) { return data_.data() + b * shape_.item(); }
	const T* item(std::size_t b) const { return data_.data() + b * shape_.item(); }

	std::size_t offset(std::size_t b, std::size_t ch, std::size_t y, std::size_t x) const {
		return ((b * shape_.c + ch) * shape_.h + y) * shape_.w + x;
	}
	T& operator()(std::size_t b, std::size_t ch, std::size_t y, std::size_t x) {
		return data_[offset(b, ch, y, x)];
	}
	const T& operator()(std::size_t b, std::size_t ch, std::size_t y, std::size_t x) const {
		return data_[offset(b, ch, y, x)];
	}
	T& operator[](std::size_t i) { return data_[i]; }
	const T& operator[](std::size_t i) const { return data_[i]; }

	void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

	/// Accumulates `other` into this tensor; shapes must agree.
	Tensor4& operator+=(const Tensor4& other) {
		if (other.shape_ != shape_)
			throw ConfigError("cannot accumulate " + to_string(other.shape_) + " into " + to_string(shape_));
		for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
		return *this;
	}

	template<typename U>
	Tensor4<U> cast() const {
		Tensor4<U> out(shape_);
		std::transform(data_.begin(), data_.end(), out.data(), [](T v) { return static_cast<U>(v); });
		return out;
	}

	/// Copies batch item `b` into a tensor of batch size one.
	Tensor4 slice(std::size_t b) const {
		Shape s = shape_;
		s.n = 1;
		return Tensor4(s, std::span<const T>(item(b), shape_.item()));
	}

	friend bool operator==(const Tensor4& a, const Tensor4& b) {
		return a.shape_ == b.shape_ && std::equal(a.data_.begin(), a.data_.end(), b.data_.begin());
	}

private:
	Shape shape_{};
	storage_type data_;
};

using Tensor4f = Tensor4<float>;
using Tensor4d = Tensor4<double>;

/// Stacks batch-one tensors of equal shape along the batch axis.
template<typename T>
Tensor4<T> stack(std::span<const Tensor4<T>> items) {
	if (items.empty()) return {};
	Shape s = items.front().shape();
	for (const auto& t : items)
		if (t.n() != 1 || t.c() != s.c || t.h() != s.h || t.w() != s.w)
			throw ConfigError("stack requires batch-one tensors of identical shape");
	s.n = items.size();
	Tensor4<T> out(s);
	for (std::size_t b = 0; b < items.size(); ++b)
		std::copy_n(items[b].data(), s.item(), out.item(b));
	return out;
}

template<typename T>
double inner_product(const Tensor4<T>& a, const Tensor4<T>& b) {
	if (a.shape() != b.shape()) throw ConfigError("inner product of mismatched tensors");
	double acc = 0;
	for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
	return acc;
}

template<typename T>
double max_abs_diff(const Tensor4<T>& a, const Tensor4<T>& b) {
	if (a.shape() != b.shape()) throw ConfigError("comparison of mismatched tensors");
	double m = 0;
	for (std::size_t i = 0; i < a.size(); ++i)
		m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
	return m;
}

}  // namespace rnan

#endif  // RNAN_TENSOR_HPP_
