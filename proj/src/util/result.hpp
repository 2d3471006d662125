#pragma once

#include <cassert>
#include <type_traits>
#include <utility>
#include <variant>

namespace util {

// Minimal expected-style carrier for total functions that must not throw on
// bad input (decoders, loaders). When T and E are the same type, use the
// ok()/err() factories.
template <typename T, typename E>
class Result {
public:
    template <typename TT = T, typename = std::enable_if_t<!std::is_same_v<TT, E>>>
    Result(T value) : v_(std::in_place_index<0>, std::move(value)) {}
    template <typename EE = E, typename = std::enable_if_t<!std::is_same_v<T, EE>>, typename = void>
    Result(E error) : v_(std::in_place_index<1>, std::move(error)) {}

    static Result make_ok(T value) { return Result(std::in_place_index<0>, std::move(value)); }
    static Result make_err(E error) { return Result(std::in_place_index<1>, std::move(error)); }

    bool ok() const { return v_.index() == 0; }
    explicit operator bool() const { return ok(); }

    T& value() {
        assert(ok());
        return std::get<0>(v_);
    }
    const T& value() const {
        assert(ok());
        return std::get<0>(v_);
    }
    const E& error() const {
        assert(!ok());
        return std::get<1>(v_);
    }

    T value_or(T fallback) const {
        return ok() ? std::get<0>(v_) : std::move(fallback);
    }

private:
    template <size_t I, typename V>
    Result(std::in_place_index_t<I> idx, V&& v) : v_(idx, std::forward<V>(v)) {}

    std::variant<T, E> v_;
};

} // namespace util
