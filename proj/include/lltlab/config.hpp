#pragma once

// Strict JSON experiment documents. Every reader records the fields it
// consumed and rejects the rest; errors carry the full field path.

#include "lltlab/core.hpp"
#include "lltlab/kernel.hpp"
#include "lltlab/stable.hpp"
#include "lltlab/tail.hpp"

#include "json.hpp"

#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace lltlab {

inline constexpr int kSchemaVersion = 1;

inline const std::vector<std::string>& experiment_kinds() {
    static const std::vector<std::string> kinds{"simulate", "mixing", "charfn-bound", "stable-density",
                                                "llt",      "dj-check", "conditions"};
    return kinds;
}

/// View of one JSON object with a field path for messages. Values read
/// through it, defaults included, are echoed into `resolved()`.
class ObjectReader {
public:
    ObjectReader(const json& object, std::string path) : object_(object), path_(std::move(path)) {
        if (!object_.is_object()) fail("", "must be an object");
        resolved_ = json::object();
    }

    const std::string& path() const noexcept { return path_; }
    bool has(const std::string& key) const { return object_.contains(key); }

    [[noreturn]] void fail(const std::string& key, const std::string& message) const {
        throw ValidationError(field(key) + ": " + message);
    }

    std::string field(const std::string& key) const { return key.empty() ? path_ : path_ + "." + key; }

    const json& raw(const std::string& key) {
        if (!has(key)) fail(key, "is required");
        seen_.insert(key);
        return object_.at(key);
    }

    double number(const std::string& key, std::optional<double> fallback = std::nullopt) {
        if (!has(key)) return echo(key, require_default(key, fallback));
        const json& v = raw(key);
        if (!v.is_number()) fail(key, "must be a number");
        return echo(key, v.get<double>());
    }

    std::int64_t integer(const std::string& key, std::optional<std::int64_t> fallback = std::nullopt) {
        if (!has(key)) return echo(key, require_default(key, fallback));
        const json& v = raw(key);
        if (!v.is_number_integer()) fail(key, "must be an integer");
        return echo(key, v.get<std::int64_t>());
    }

    std::size_t count(const std::string& key, std::int64_t minimum, std::optional<std::int64_t> fallback = std::nullopt) {
        const std::int64_t v = integer(key, fallback);
        if (v < minimum) fail(key, "must be >= " + std::to_string(minimum) + ", got " + std::to_string(v));
        return static_cast<std::size_t>(v);
    }

    std::uint64_t seed(const std::string& key, std::optional<std::uint64_t> fallback = std::nullopt) {
        if (!has(key)) {
            if (!fallback) fail(key, "is required");
            resolved_[key] = *fallback;
            return *fallback;
        }
        const json& v = raw(key);
        if (!v.is_number_unsigned()) fail(key, "must be a nonnegative integer");
        resolved_[key] = v.get<std::uint64_t>();
        return v.get<std::uint64_t>();
    }

    bool boolean(const std::string& key, std::optional<bool> fallback = std::nullopt) {
        if (!has(key)) return echo(key, require_default(key, fallback));
        const json& v = raw(key);
        if (!v.is_boolean()) fail(key, "must be a boolean");
        return echo(key, v.get<bool>());
    }

    std::string string(const std::string& key, std::optional<std::string> fallback = std::nullopt) {
        if (!has(key)) return echo(key, require_default(key, fallback));
        const json& v = raw(key);
        if (!v.is_string()) fail(key, "must be a string");
        return echo(key, v.get<std::string>());
    }

    std::string choice(const std::string& key, const std::vector<std::string>& options,
                       std::optional<std::string> fallback = std::nullopt) {
        const std::string v = string(key, fallback);
        if (std::find(options.begin(), options.end(), v) == options.end()) {
            std::string list;
            for (const auto& o : options) list += (list.empty() ? "" : ", ") + o;
            fail(key, "must be one of {" + list + "}, got '" + v + "'");
        }
        return v;
    }

    std::vector<double> numbers(const std::string& key, std::optional<std::vector<double>> fallback = std::nullopt) {
        if (!has(key)) return echo(key, require_default(key, fallback));
        const json& v = raw(key);
        if (!v.is_array()) fail(key, "must be an array of numbers");
        std::vector<double> out;
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (!v[i].is_number()) fail(key + "[" + std::to_string(i) + "]", "must be a number");
            out.push_back(v[i].get<double>());
        }
        return echo(key, out);
    }

    std::vector<std::size_t> counts(const std::string& key, std::int64_t minimum,
                                    std::optional<std::vector<std::size_t>> fallback = std::nullopt) {
        if (!has(key)) return echo(key, require_default(key, fallback));
        const json& v = raw(key);
        if (!v.is_array() || v.empty()) fail(key, "must be a nonempty array of integers");
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < v.size(); ++i) {
            const std::string k = key + "[" + std::to_string(i) + "]";
            if (!v[i].is_number_integer()) fail(k, "must be an integer");
            const auto x = v[i].get<std::int64_t>();
            if (x < minimum) fail(k, "must be >= " + std::to_string(minimum) + ", got " + std::to_string(x));
            out.push_back(static_cast<std::size_t>(x));
        }
        return echo(key, out);
    }

    std::vector<std::vector<double>> matrix(const std::string& key) {
        const json& v = raw(key);
        if (!v.is_array() || v.empty()) fail(key, "must be a nonempty array of rows");
        std::vector<std::vector<double>> out;
        for (std::size_t i = 0; i < v.size(); ++i) {
            const std::string row = key + "[" + std::to_string(i) + "]";
            if (!v[i].is_array()) fail(row, "must be an array of numbers");
            std::vector<double> r;
            for (std::size_t j = 0; j < v[i].size(); ++j) {
                if (!v[i][j].is_number()) fail(row + "[" + std::to_string(j) + "]", "must be a number");
                r.push_back(v[i][j].get<double>());
            }
            out.push_back(std::move(r));
        }
        resolved_[key] = out;
        return out;
    }

    /// Nested object; its resolved form is merged back by `finish`.
    ObjectReader child(const std::string& key) {
        const json& v = raw(key);
        if (!v.is_object()) fail(key, "must be an object");
        return ObjectReader(v, field(key));
    }

    void adopt(const std::string& key, const ObjectReader& reader) { resolved_[key] = reader.resolved(); }

    /// Rejects unknown fields.
    void finish() const {
        for (auto it = object_.begin(); it != object_.end(); ++it)
            if (!seen_.count(it.key())) fail(it.key(), "unknown field");
    }

    const json& resolved() const noexcept { return resolved_; }
    json& resolved() noexcept { return resolved_; }

private:
    template <typename T>
    T require_default(const std::string& key, const std::optional<T>& fallback) const {
        if (!fallback) fail(key, "is required");
        return *fallback;
    }

    template <typename T>
    T echo(const std::string& key, T value) {
        resolved_[key] = value;
        return value;
    }

    const json& object_;
    std::string path_;
    std::set<std::string> seen_;
    json resolved_;
};

/// Wraps library validation errors with the field path of the spec that
/// produced them.
template <typename F>
auto at_path(const std::string& path, F&& build) -> decltype(build()) {
    try {
        return build();
    } catch (const ValidationError& e) {
        const std::string what = e.what();
        if (what.rfind("config.", 0) == 0) throw;
        throw ValidationError(path + ": " + what);
    }
}

// ---------------------------------------------------------------------------
// Component specs
// ---------------------------------------------------------------------------

inline TailModel read_tail(ObjectReader r) {
    TailModel t;
    t.p = r.number("p");
    t.x0 = r.number("x0", 1.0);
    t.c_plus = r.number("c_plus", 0.5);
    if (r.has("ell")) {
        ObjectReader e = r.child("ell");
        const std::string kind = e.choice("kind", {"constant", "log_power"});
        if (kind == "constant") {
            t.ell = SlowlyVarying::constant(e.number("kappa", std::pow(t.x0, t.p)));
        } else {
            t.ell = SlowlyVarying::log_power(e.number("kappa"), e.number("gamma"));
        }
        e.finish();
        r.adopt("ell", e);
    } else {
        t.ell = SlowlyVarying::constant(std::pow(t.x0, t.p));
    }
    r.finish();
    at_path(r.path(), [&] {
        t.validate();
        return 0;
    });
    return t;
}

inline json tail_resolved(const TailModel& t) {
    json ell = t.ell.kind == SlowlyVarying::Kind::constant
                   ? json{{"kind", "constant"}, {"kappa", t.ell.kappa}}
                   : json{{"kind", "log_power"}, {"kappa", t.ell.kappa}, {"gamma", t.ell.gamma}};
    return {{"p", t.p}, {"x0", t.x0}, {"c_plus", t.c_plus}, {"ell", ell}};
}

struct ModelSpec {
    ChainModel model;
    std::optional<TailModel> tail;
    json resolved;
};

inline ModelSpec read_model(ObjectReader r) {
    const std::string kind = r.choice(
        "kind", {"finite", "iid_finite", "example1", "example3", "gibbs", "gauss", "iid_tail", "copy_tail"});
    auto build = [&]() -> ModelSpec {
        if (kind == "finite") {
            const json& ks = r.raw("kernels");
            if (!ks.is_array() || ks.empty()) r.fail("kernels", "must be a nonempty array of matrices");
            std::vector<FiniteKernel> kernels;
            json resolved_kernels = json::array();
            for (std::size_t i = 0; i < ks.size(); ++i) {
                json wrapper{{"rows", ks[i]}};
                ObjectReader kr(wrapper, r.field("kernels[" + std::to_string(i) + "]"));
                const auto rows = kr.matrix("rows");
                kernels.push_back(at_path(kr.path(), [&] { return FiniteKernel::from_rows(rows); }));
                resolved_kernels.push_back(rows);
            }
            r.resolved()["kernels"] = resolved_kernels;
            std::optional<std::vector<double>> initial;
            if (r.has("initial")) initial = r.numbers("initial");
            const std::size_t horizon = r.count("horizon", 1, 16);
            auto model = at_path(r.path(), [&] { return build_finite_chain(kernels, initial, horizon); });
            if (!initial) r.resolved()["initial"] = model.finite().initial;
            return {std::move(model), std::nullopt, {}};
        }
        if (kind == "iid_finite") {
            const auto law = r.numbers("law");
            return {at_path(r.field("law"), [&] { return build_iid_finite(law); }), std::nullopt, {}};
        }
        if (kind == "example1") return {build_example1(), std::nullopt, {}};
        if (kind == "example3") {
            const std::size_t n = r.count("truncation", 2, 20);
            return {at_path(r.path(), [&] { return build_example3(n); }), std::nullopt, {}};
        }
        if (kind == "gibbs") {
            const auto pi = r.numbers("pi");
            const auto eps = r.numbers("eps");
            const std::size_t n = r.count("truncation", 2, static_cast<std::int64_t>(pi.size()));
            return {at_path(r.path(), [&] { return build_gibbs_chain(pi, eps, n); }), std::nullopt, {}};
        }
        if (kind == "gauss") {
            const std::size_t burn = r.count("burn_in", 0, 0);
            return {build_gauss_chain(burn), std::nullopt, {}};
        }
        ObjectReader tr = r.child("tail");
        const TailModel tail = read_tail(tr);
        r.resolved()["tail"] = tail_resolved(tail);
        if (kind == "iid_tail") return {build_iid_tail(tail), tail, {}};
        return {build_copy_tail(tail), tail, {}};
    };
    ModelSpec spec = build();
    r.finish();
    spec.resolved = r.resolved();
    return spec;
}

inline Functional read_functional(ObjectReader r, json& resolved) {
    const std::string kind =
        r.choice("kind", {"table", "identity", "shift", "gauss_digit", "pareto_transform", "zero"});
    std::optional<Lattice> lattice;
    if (r.has("lattice")) {
        ObjectReader l = r.child("lattice");
        lattice = Lattice{l.number("h"), l.number("offset", 0.0)};
        if (!(lattice->span > 0.0)) l.fail("h", "must be positive");
        l.finish();
        r.adopt("lattice", l);
    }
    Functional f = at_path(r.path(), [&]() -> Functional {
        if (kind == "table") {
            if (r.has("values") == r.has("tables")) r.fail("values", "give exactly one of 'values' or 'tables'");
            if (r.has("values")) return Functional::values(r.numbers("values"), lattice);
            return Functional::per_step(r.matrix("tables"), lattice);
        }
        if (kind == "identity") return Functional::identity(lattice);
        if (kind == "shift") return Functional::shift(r.number("shift"));
        if (kind == "gauss_digit") return Functional::gauss_digit();
        if (kind == "pareto_transform") return Functional::pareto_transform(r.number("p"), r.number("x0", 1.0));
        return Functional::zero();
    });
    if (lattice && (kind == "shift" || kind == "gauss_digit" || kind == "pareto_transform" || kind == "zero"))
        r.fail("lattice", "is not accepted for functional kind '" + kind + "'");
    r.finish();
    resolved = r.resolved();
    return f;
}

inline StableLaw read_stable(ObjectReader& r) {
    StableLaw law;
    law.p = r.number("p");
    law.scale = r.number("scale", law.p == 2.0 ? 1.0 / std::numbers::sqrt2 : 1.0);
    law.beta = r.number("beta", 0.0);
    at_path(r.path(), [&] {
        law.validate();
        return 0;
    });
    return law;
}

/// Evenly spaced grid {lo, hi, points}.
inline std::vector<double> read_grid(ObjectReader r, json& resolved, double lo, double hi, std::int64_t points) {
    const double a = r.number("lo", lo);
    const double b = r.number("hi", hi);
    const std::size_t m = r.count("points", 1, points);
    if (!(b >= a)) r.fail("hi", "must be >= lo");
    r.finish();
    resolved = r.resolved();
    return linspace(a, b, m);
}

inline json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("config: cannot read '" + path + "'");
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ValidationError("config: invalid JSON in '" + path + "': " + e.what());
    }
}

}  // namespace lltlab
