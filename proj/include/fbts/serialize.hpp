#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fbts/approx.hpp"
#include "fbts/mdp.hpp"

namespace fbts {

/// Bad or missing configuration (CLI exit code 2).
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Operation not applicable to the environment (CLI exit code 3).
class UnsupportedEnvironmentError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Corrupted or inconsistent persisted files (CLI exit code 4).
class IntegrityError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace io {

/// Shortest round-trip decimal representation.
inline std::string fmt(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IntegrityError("cannot open " + path.string());
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << content;
}

/// Whitespace-token reader with a one-line error context.
class TokenReader {
public:
    explicit TokenReader(const std::string& text, std::string origin)
        : stream_(text), origin_(std::move(origin)) {}

    std::string next() {
        std::string token;
        if (!(stream_ >> token)) throw IntegrityError(origin_ + ": unexpected end of file");
        return token;
    }

    void expect(const std::string& literal) {
        const std::string token = next();
        if (token != literal)
            throw IntegrityError(origin_ + ": expected '" + literal + "', found '" + token + "'");
    }

    long next_long() {
        try {
            return std::stol(next());
        } catch (const std::exception&) {
            throw IntegrityError(origin_ + ": expected an integer");
        }
    }

    double next_double() {
        try {
            return std::stod(next());
        } catch (const std::exception&) {
            throw IntegrityError(origin_ + ": expected a number");
        }
    }

    bool at_end() {
        std::string token;
        return !(stream_ >> token);
    }

private:
    std::istringstream stream_;
    std::string origin_;
};

} // namespace io

/// FiniteMdp <-> structured text (states, actions, gamma, reward matrix,
/// transition tensor rows).
inline std::string serialize_finite_mdp(const FiniteMdp& mdp) {
    std::ostringstream out;
    out << "finite_mdp v1\n";
    out << "states " << mdp.n_states << "\n";
    out << "actions " << mdp.action_count << "\n";
    out << "gamma " << io::fmt(mdp.gamma) << "\n";
    out << "r_max " << io::fmt(mdp.r_max) << "\n";
    out << "rewards\n";
    for (int s = 0; s < mdp.n_states; ++s) {
        for (int a = 0; a < mdp.action_count; ++a)
            out << (a ? " " : "") << io::fmt(mdp.reward_matrix(s, a));
        out << "\n";
    }
    for (int a = 0; a < mdp.action_count; ++a) {
        out << "transitions " << a << "\n";
        for (int s = 0; s < mdp.n_states; ++s) {
            for (int j = 0; j < mdp.n_states; ++j)
                out << (j ? " " : "") << io::fmt(mdp.transition[a](s, j));
            out << "\n";
        }
    }
    out << "end\n";
    return out.str();
}

inline FiniteMdp parse_finite_mdp(const std::string& text, const std::string& origin = "mdp") {
    io::TokenReader reader(text, origin);
    reader.expect("finite_mdp");
    reader.expect("v1");
    FiniteMdp mdp;
    reader.expect("states");
    mdp.n_states = static_cast<int>(reader.next_long());
    reader.expect("actions");
    mdp.action_count = static_cast<int>(reader.next_long());
    reader.expect("gamma");
    mdp.gamma = reader.next_double();
    reader.expect("r_max");
    mdp.r_max = reader.next_double();
    if (mdp.n_states < 1 || mdp.n_states > 1000000 || mdp.action_count < 1)
        throw IntegrityError(origin + ": implausible dimensions");
    reader.expect("rewards");
    mdp.reward_matrix = Matrix::Zero(mdp.n_states, mdp.action_count);
    for (int s = 0; s < mdp.n_states; ++s)
        for (int a = 0; a < mdp.action_count; ++a) mdp.reward_matrix(s, a) = reader.next_double();
    mdp.transition.assign(mdp.action_count, Matrix::Zero(mdp.n_states, mdp.n_states));
    for (int a = 0; a < mdp.action_count; ++a) {
        reader.expect("transitions");
        if (reader.next_long() != a) throw IntegrityError(origin + ": transition blocks out of order");
        for (int s = 0; s < mdp.n_states; ++s)
            for (int j = 0; j < mdp.n_states; ++j) mdp.transition[a](s, j) = reader.next_double();
    }
    reader.expect("end");
    try {
        mdp.validate(1e-9);
    } catch (const std::invalid_argument& e) {
        throw IntegrityError(origin + ": " + e.what());
    }
    return mdp;
}

inline std::string serialize_feature_map(const FeatureMap& f) {
    std::ostringstream out;
    if (f.kind == FeatureMap::Kind::rbf_grid) {
        out << "feature_map rbf " << f.dimension_in << " " << f.grid_n << " "
            << io::fmt(f.bandwidth) << "\n";
        return out.str();
    }
    out << "feature_map affine " << f.dimension_in << " " << f.dimension_out << "\n";
    for (int i = 0; i < f.dimension_out; ++i) {
        for (int j = 0; j < f.dimension_in; ++j) out << (j ? " " : "") << io::fmt(f.weight(i, j));
        out << "\n";
    }
    out << "offset\n";
    for (int i = 0; i < f.dimension_out; ++i) out << (i ? " " : "") << io::fmt(f.offset[i]);
    out << "\n";
    return out.str();
}

inline FeatureMap parse_feature_map(io::TokenReader& reader, const std::string& origin) {
    const std::string kind = reader.next();
    if (kind == "rbf") {
        const int dim = static_cast<int>(reader.next_long());
        const int grid_n = static_cast<int>(reader.next_long());
        const double bandwidth = reader.next_double();
        if (dim < 1 || grid_n < 1 || bandwidth <= 0.0)
            throw IntegrityError(origin + ": implausible rbf feature parameters");
        return FeatureMap::rbf(dim, grid_n, bandwidth);
    }
    if (kind != "affine") throw IntegrityError(origin + ": unknown feature map kind '" + kind + "'");
    FeatureMap f;
    f.dimension_in = static_cast<int>(reader.next_long());
    f.dimension_out = static_cast<int>(reader.next_long());
    if (f.dimension_in < 0 || f.dimension_out < 1)
        throw IntegrityError(origin + ": implausible feature dimensions");
    f.weight = Matrix::Zero(f.dimension_out, f.dimension_in);
    for (int i = 0; i < f.dimension_out; ++i)
        for (int j = 0; j < f.dimension_in; ++j) f.weight(i, j) = reader.next_double();
    reader.expect("offset");
    f.offset = Vector::Zero(f.dimension_out);
    for (int i = 0; i < f.dimension_out; ++i) f.offset[i] = reader.next_double();
    return f;
}

/// Model checkpoint: family tag, feature-map descriptor, parameter vector.
inline std::string serialize_vfa(const Vfa& vfa) {
    std::ostringstream out;
    out << "model v1\nkind vfa\n";
    out << "family " << (vfa.family == VfaFamily::tabular ? "tabular" : "linear") << "\n";
    out << "v_max " << io::fmt(vfa.v_max) << "\n";
    if (vfa.family == VfaFamily::tabular) {
        out << "n_states " << vfa.n_states << "\n";
        out << "params " << vfa.values.size() << "\n";
        for (int i = 0; i < vfa.values.size(); ++i) out << (i ? " " : "") << io::fmt(vfa.values[i]);
        out << "\n";
    } else {
        out << serialize_feature_map(vfa.features);
        out << "params " << vfa.weights.size() << "\n";
        for (int i = 0; i < vfa.weights.size(); ++i)
            out << (i ? " " : "") << io::fmt(vfa.weights[i]);
        out << "\n";
    }
    out << "end\n";
    return out.str();
}

inline Vfa parse_vfa(const std::string& text, const std::string& origin = "vfa checkpoint") {
    io::TokenReader reader(text, origin);
    reader.expect("model");
    reader.expect("v1");
    reader.expect("kind");
    reader.expect("vfa");
    reader.expect("family");
    const std::string family = reader.next();
    Vfa vfa;
    reader.expect("v_max");
    vfa.v_max = reader.next_double();
    if (family == "tabular") {
        vfa.family = VfaFamily::tabular;
        reader.expect("n_states");
        vfa.n_states = static_cast<int>(reader.next_long());
        reader.expect("params");
        const long count = reader.next_long();
        if (count != vfa.n_states) throw IntegrityError(origin + ": parameter count mismatch");
        vfa.values = Vector::Zero(count);
        for (long i = 0; i < count; ++i) vfa.values[i] = reader.next_double();
    } else if (family == "linear") {
        vfa.family = VfaFamily::linear;
        reader.expect("feature_map");
        vfa.features = parse_feature_map(reader, origin);
        reader.expect("params");
        const long count = reader.next_long();
        if (count != vfa.features.dimension_out)
            throw IntegrityError(origin + ": parameter count mismatch");
        vfa.weights = Vector::Zero(count);
        for (long i = 0; i < count; ++i) vfa.weights[i] = reader.next_double();
    } else {
        throw IntegrityError(origin + ": unknown family '" + family + "'");
    }
    reader.expect("end");
    return vfa;
}

inline std::string serialize_policy(const PolicyModel& pi) {
    std::ostringstream out;
    out << "model v1\nkind policy\n";
    out << "family " << (pi.family == PolicyFamily::tabular ? "tabular" : "linear") << "\n";
    out << "action_count " << pi.action_count << "\n";
    if (pi.family == PolicyFamily::tabular) {
        out << "n_states " << pi.n_states << "\n";
        out << "params " << pi.actions.size() << "\n";
        for (std::size_t i = 0; i < pi.actions.size(); ++i)
            out << (i ? " " : "") << pi.actions[i];
        out << "\n";
    } else {
        out << serialize_feature_map(pi.features);
        out << "params " << pi.score_weights.rows() * pi.score_weights.cols() << "\n";
        for (int a = 0; a < pi.score_weights.rows(); ++a) {
            for (int j = 0; j < pi.score_weights.cols(); ++j)
                out << (j ? " " : "") << io::fmt(pi.score_weights(a, j));
            out << "\n";
        }
    }
    out << "end\n";
    return out.str();
}

inline PolicyModel parse_policy(const std::string& text,
                                const std::string& origin = "policy checkpoint") {
    io::TokenReader reader(text, origin);
    reader.expect("model");
    reader.expect("v1");
    reader.expect("kind");
    reader.expect("policy");
    reader.expect("family");
    const std::string family = reader.next();
    PolicyModel pi;
    reader.expect("action_count");
    pi.action_count = static_cast<int>(reader.next_long());
    if (pi.action_count < 1) throw IntegrityError(origin + ": implausible action count");
    if (family == "tabular") {
        pi.family = PolicyFamily::tabular;
        reader.expect("n_states");
        pi.n_states = static_cast<int>(reader.next_long());
        reader.expect("params");
        const long count = reader.next_long();
        if (count != pi.n_states) throw IntegrityError(origin + ": parameter count mismatch");
        pi.actions.resize(count);
        for (long i = 0; i < count; ++i) {
            pi.actions[i] = static_cast<ActionId>(reader.next_long());
            if (pi.actions[i] < 0 || pi.actions[i] >= pi.action_count)
                throw IntegrityError(origin + ": action index out of range");
        }
    } else if (family == "linear") {
        pi.family = PolicyFamily::linear;
        reader.expect("feature_map");
        pi.features = parse_feature_map(reader, origin);
        reader.expect("params");
        const long count = reader.next_long();
        if (count != static_cast<long>(pi.action_count) * pi.features.dimension_out)
            throw IntegrityError(origin + ": parameter count mismatch");
        pi.score_weights = Matrix::Zero(pi.action_count, pi.features.dimension_out);
        for (int a = 0; a < pi.action_count; ++a)
            for (int j = 0; j < pi.features.dimension_out; ++j)
                pi.score_weights(a, j) = reader.next_double();
    } else {
        throw IntegrityError(origin + ": unknown family '" + family + "'");
    }
    reader.expect("end");
    return pi;
}

/// Iteration sample sets, persisted for replay and resume.
inline std::string serialize_regression_set(const std::vector<LabeledValueSample>& samples) {
    std::ostringstream out;
    out << "dataset v1 regression " << samples.size() << "\n";
    for (const auto& sample : samples) {
        out << sample.state.size();
        for (int i = 0; i < sample.state.size(); ++i) out << " " << io::fmt(sample.state[i]);
        out << " " << io::fmt(sample.target) << "\n";
    }
    out << "end\n";
    return out.str();
}

inline std::vector<LabeledValueSample> parse_regression_set(const std::string& text,
                                                            const std::string& origin = "dataset") {
    io::TokenReader reader(text, origin);
    reader.expect("dataset");
    reader.expect("v1");
    reader.expect("regression");
    const long count = reader.next_long();
    std::vector<LabeledValueSample> samples;
    samples.reserve(count);
    for (long i = 0; i < count; ++i) {
        const long dim = reader.next_long();
        StateVec s(dim);
        for (long j = 0; j < dim; ++j) s[j] = reader.next_double();
        samples.push_back({std::move(s), reader.next_double()});
    }
    reader.expect("end");
    return samples;
}

inline std::string serialize_search_set(const std::vector<ClassificationSample>& samples) {
    std::ostringstream out;
    out << "dataset v1 search " << samples.size() << "\n";
    for (const auto& sample : samples) {
        out << sample.state.size();
        for (int i = 0; i < sample.state.size(); ++i) out << " " << io::fmt(sample.state[i]);
        out << " " << io::fmt(sample.u_hat) << " " << sample.q_hat.size();
        for (int a = 0; a < sample.q_hat.size(); ++a) out << " " << io::fmt(sample.q_hat[a]);
        out << "\n";
    }
    out << "end\n";
    return out.str();
}

inline std::vector<ClassificationSample> parse_search_set(const std::string& text,
                                                          const std::string& origin = "dataset") {
    io::TokenReader reader(text, origin);
    reader.expect("dataset");
    reader.expect("v1");
    reader.expect("search");
    const long count = reader.next_long();
    std::vector<ClassificationSample> samples;
    samples.reserve(count);
    for (long i = 0; i < count; ++i) {
        const long dim = reader.next_long();
        StateVec s(dim);
        for (long j = 0; j < dim; ++j) s[j] = reader.next_double();
        const double u = reader.next_double();
        const long actions = reader.next_long();
        Vector q(actions);
        for (long a = 0; a < actions; ++a) q[a] = reader.next_double();
        samples.push_back({std::move(s), u, std::move(q)});
    }
    reader.expect("end");
    return samples;
}

/// Flat key = value configuration, '#' comments, later keys win.
class Config {
public:
    Config() = default;

    static Config parse(const std::string& text) {
        Config cfg;
        std::istringstream in(text);
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            const auto trim = [](std::string s) {
                const auto begin = s.find_first_not_of(" \t\r");
                if (begin == std::string::npos) return std::string();
                const auto end = s.find_last_not_of(" \t\r");
                return s.substr(begin, end - begin + 1);
            };
            if (trim(line).empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
            const std::string key = trim(line.substr(0, eq));
            const std::string value = trim(line.substr(eq + 1));
            if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
            cfg.values_[key] = value;
        }
        return cfg;
    }

    static Config load(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open config file " + path.string());
        std::ostringstream buffer;
        buffer << in.rdbuf();
        return parse(buffer.str());
    }

    void set(const std::string& key, const std::string& value) { values_[key] = value; }

    /// Applies a "key=value" command-line override.
    void override_from(const std::string& spec) {
        const auto eq = spec.find('=');
        if (eq == std::string::npos || eq == 0)
            throw ConfigError("override must look like key=value, got '" + spec + "'");
        values_[spec.substr(0, eq)] = spec.substr(eq + 1);
    }

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::string get_string(const std::string& key, const std::string& fallback = "") const {
        const auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }

    std::string require_string(const std::string& key) const {
        const auto it = values_.find(key);
        if (it == values_.end()) throw ConfigError("missing required config key '" + key + "'");
        return it->second;
    }

    long get_long(const std::string& key, long fallback) const {
        const auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        try {
            std::size_t pos = 0;
            const long v = std::stol(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument("trailing");
            return v;
        } catch (const std::exception&) {
            throw ConfigError("config key '" + key + "' is not an integer: " + it->second);
        }
    }

    double get_double(const std::string& key, double fallback) const {
        const auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        try {
            std::size_t pos = 0;
            const double v = std::stod(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument("trailing");
            return v;
        } catch (const std::exception&) {
            throw ConfigError("config key '" + key + "' is not a number: " + it->second);
        }
    }

    bool get_bool(const std::string& key, bool fallback) const {
        const auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        if (it->second == "true" || it->second == "1") return true;
        if (it->second == "false" || it->second == "0") return false;
        throw ConfigError("config key '" + key + "' is not a boolean: " + it->second);
    }

    /// Deterministic normalized snapshot (sorted keys).
    std::string snapshot() const {
        std::ostringstream out;
        for (const auto& [key, value] : values_) out << key << " = " << value << "\n";
        return out.str();
    }

    const std::map<std::string, std::string>& entries() const { return values_; }

private:
    std::map<std::string, std::string> values_;
};

} // namespace fbts
