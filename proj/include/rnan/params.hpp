#ifndef RNAN_PARAMS_HPP_
#define RNAN_PARAMS_HPP_

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "rnan/tensor.hpp"

namespace rnan {

template<typename T>
struct ParamEntry {
	std::string name;
	Tensor4<T> value;
	Tensor4<T> adam_m;
	Tensor4<T> adam_v;
};

/// Named, ordered learnable tensors plus their Adam moment state.
template<typename T>
class ParamStore {
public:
	std::size_t add(std::string name, Tensor4<T> value) {
		if (index_.contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
		const std::size_t i = entries_.size();
		index_.emplace(name, i);
		Tensor4<T> m(value.shape()), v(value.shape());
		entries_.push_back({std::move(name), std::move(value), std::move(m), std::move(v)});
		return i;
	}

	std::size_t size() const { return entries_.size(); }
	bool contains(const std::string& name) const { return index_.contains(name); }
	std::size_t index(const std::string& name) const {
		auto it = index_.find(name);
		if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
		return it->second;
	}

	ParamEntry<T>& entry(std::size_t i) { return entries_.at(i); }
	const ParamEntry<T>& entry(std::size_t i) const { return entries_.at(i); }
	Tensor4<T>& value(std::size_t i) { return entries_[i].value; }
	const Tensor4<T>& value(std::size_t i) const { return entries_[i].value; }
	Tensor4<T>& value(const std::string& name) { return value(index(name)); }
	const Tensor4<T>& value(const std::string& name) const { return value(index(name)); }

	auto begin() const { return entries_.begin(); }
	auto end() const { return entries_.end(); }

	std::uint64_t step() const { return step_; }
	void set_step(std::uint64_t s) { step_ = s; }

	std::size_t total_scalars() const {
		std::size_t n = 0;
		for (const auto& e : entries_) n += e.value.size();
		return n;
	}

	template<typename U>
	ParamStore<U> cast() const {
		ParamStore<U> out;
		for (const auto& e : entries_) {
			const std::size_t i = out.add(e.name, e.value.template cast<U>());
			out.entry(i).adam_m = e.adam_m.template cast<U>();
			out.entry(i).adam_v = e.adam_v.template cast<U>();
		}
		out.set_step(step_);
		return out;
	}

	friend bool operator==(const ParamStore& a, const ParamStore& b) {
		if (a.step_ != b.step_ || a.entries_.size() != b.entries_.size()) return false;
		for (std::size_t i = 0; i < a.entries_.size(); ++i) {
			const auto &x = a.entries_[i], &y = b.entries_[i];
			if (x.name != y.name || !(x.value == y.value) || !(x.adam_m == y.adam_m) || !(x.adam_v == y.adam_v))
				return false;
		}
		return true;
	}

private:
	std::vector<ParamEntry<T>> entries_;
	std::map<std::string, std::size_t> index_;
	std::uint64_t step_ = 0;
};

/// Gradient buffers aligned index-for-index with a ParamStore.
template<typename T>
class Gradients {
public:
	Gradients() = default;
	explicit Gradients(const ParamStore<T>& store) {
		tensors_.reserve(store.size());
		for (const auto& e : store) tensors_.emplace_back(e.value.shape());
	}

	std::size_t size() const { return tensors_.size(); }
	Tensor4<T>& operator[](std::size_t i) { return tensors_.at(i); }
	const Tensor4<T>& operator[](std::size_t i) const { return tensors_.at(i); }

	void accumulate(std::size_t i, const Tensor4<T>& g) { tensors_.at(i) += g; }

	Gradients& operator+=(const Gradients& other) {
		if (other.size() != size()) throw ConfigError("gradient sets are not aligned");
		for (std::size_t i = 0; i < size(); ++i) tensors_[i] += other.tensors_[i];
		return *this;
	}

	void scale(T s) {
		for (auto& t : tensors_)
			for (auto& v : t.values()) v *= s;
	}

	double norm() const {
		double acc = 0;
		for (const auto& t : tensors_)
			for (const T v : t.values()) acc += static_cast<double>(v) * static_cast<double>(v);
		return std::sqrt(acc);
	}

	bool all_finite() const {
		for (const auto& t : tensors_)
			for (const T v : t.values())
				if (!std::isfinite(v)) return false;
		return true;
	}

private:
	std::vector<Tensor4<T>> tensors_;
};

}  // namespace rnan

#endif  // RNAN_PARAMS_HPP_
