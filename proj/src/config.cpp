#include "napt/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "napt/report.hpp"

namespace napt {

namespace {

std::size_t parse_size(std::string_view v) {
    std::size_t out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size() || v.empty())
        throw ConfigError("expected a non-negative integer, got '" + std::string(v) + "'");
    return out;
}

double parse_real(std::string_view v) {
    double out = 0.0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size() || v.empty())
        throw ConfigError("expected a number, got '" + std::string(v) + "'");
    return out;
}

bool parse_bool(std::string_view v) {
    if (v == "true") return true;
    if (v == "false") return false;
    throw ConfigError("expected true or false, got '" + std::string(v) + "'");
}

std::vector<std::string_view> split(std::string_view v) {
    std::vector<std::string_view> out;
    if (v.empty()) return out;
    std::size_t b = 0;
    while (true) {
        const std::size_t e = v.find(',', b);
        std::string_view item = v.substr(b, e == std::string_view::npos ? std::string_view::npos : e - b);
        while (!item.empty() && item.front() == ' ') item.remove_prefix(1);
        while (!item.empty() && item.back() == ' ') item.remove_suffix(1);
        out.push_back(item);
        if (e == std::string_view::npos) break;
        b = e + 1;
    }
    return out;
}

template <class T, class F>
std::string join(const std::vector<T>& v, F f) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) s += ",";
        s += f(v[i]);
    }
    return s;
}

struct Field {
    const char* section;
    const char* key;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, std::string_view)> set;
};

std::string size_str(std::size_t v) { return std::to_string(v); }

const std::vector<Field>& fields() {
    static const std::vector<Field> f = {
        {"run", "output", [](const RunConfig& c) { return c.output; },
         [](RunConfig& c, std::string_view v) { c.output = std::string(v); }},
        {"run", "seed", [](const RunConfig& c) { return std::to_string(c.train.seed); },
         [](RunConfig& c, std::string_view v) { c.train.seed = parse_size(v); }},
        {"run", "exec", [](const RunConfig& c) { return std::string(c.train.exec == Exec::serial ? "serial" : "parallel"); },
         [](RunConfig& c, std::string_view v) {
             if (v == "serial")
                 c.train.exec = Exec::serial;
             else if (v == "parallel")
                 c.train.exec = Exec::parallel;
             else
                 throw ConfigError("exec must be serial or parallel");
         }},

        {"train", "task", [](const RunConfig& c) { return to_string(c.train.task); },
         [](RunConfig& c, std::string_view v) { c.train.task = task_from_string(v); }},
        {"train", "rounds", [](const RunConfig& c) { return size_str(c.train.rounds); },
         [](RunConfig& c, std::string_view v) { c.train.rounds = parse_size(v); }},
        {"train", "n_per_round", [](const RunConfig& c) { return size_str(c.train.n_per_round); },
         [](RunConfig& c, std::string_view v) { c.train.n_per_round = parse_size(v); }},
        {"train", "batch_size", [](const RunConfig& c) { return size_str(c.train.batch_size); },
         [](RunConfig& c, std::string_view v) { c.train.batch_size = parse_size(v); }},
        {"train", "optimizer", [](const RunConfig& c) { return to_string(c.train.optimizer); },
         [](RunConfig& c, std::string_view v) {
             try {
                 c.train.optimizer = optimizer_from_string(v);
             } catch (const std::invalid_argument& e) {
                 throw ConfigError(e.what());
             }
         }},
        {"train", "learning_rate", [](const RunConfig& c) { return format_double(c.train.learning_rate); },
         [](RunConfig& c, std::string_view v) { c.train.learning_rate = parse_real(v); }},
        {"train", "weight_decay", [](const RunConfig& c) { return format_double(c.train.weight_decay); },
         [](RunConfig& c, std::string_view v) { c.train.weight_decay = parse_real(v); }},
        {"train", "patience", [](const RunConfig& c) { return size_str(c.train.patience); },
         [](RunConfig& c, std::string_view v) { c.train.patience = parse_size(v); }},
        {"train", "max_epochs", [](const RunConfig& c) { return size_str(c.train.max_epochs); },
         [](RunConfig& c, std::string_view v) { c.train.max_epochs = parse_size(v); }},
        {"train", "validation_fraction", [](const RunConfig& c) { return format_double(c.train.validation_fraction); },
         [](RunConfig& c, std::string_view v) { c.train.validation_fraction = parse_real(v); }},
        {"train", "estimator", [](const RunConfig& c) { return to_string(c.train.estimator); },
         [](RunConfig& c, std::string_view v) { c.train.estimator = estimator_from_string(v); }},
        {"train", "nested_M", [](const RunConfig& c) { return size_str(c.train.nested_M); },
         [](RunConfig& c, std::string_view v) { c.train.nested_M = parse_size(v); }},
        {"train", "atomic_M", [](const RunConfig& c) { return size_str(c.train.atomic_M); },
         [](RunConfig& c, std::string_view v) { c.train.atomic_M = parse_size(v); }},
        {"train", "alpha", [](const RunConfig& c) { return format_double(c.train.alpha); },
         [](RunConfig& c, std::string_view v) { c.train.alpha = parse_real(v); }},
        {"train", "m_lo", [](const RunConfig& c) { return size_str(c.train.m_lo); },
         [](RunConfig& c, std::string_view v) { c.train.m_lo = parse_size(v); }},
        {"train", "m_hi",
         [](const RunConfig& c) { return c.train.m_hi == kNoTruncation ? std::string("none") : size_str(c.train.m_hi); },
         [](RunConfig& c, std::string_view v) { c.train.m_hi = v == "none" ? kNoTruncation : parse_size(v); }},
        {"train", "x_o", [](const RunConfig& c) { return join(c.train.x_o, format_double); },
         [](RunConfig& c, std::string_view v) {
             c.train.x_o.clear();
             for (auto item : split(v)) c.train.x_o.push_back(parse_real(item));
         }},

        {"mlmc", "M0", [](const RunConfig& c) { return size_str(c.train.mlmc.M0); },
         [](RunConfig& c, std::string_view v) { c.train.mlmc.M0 = parse_size(v); }},
        {"mlmc", "r1", [](const RunConfig& c) { return format_double(c.train.mlmc.r1); },
         [](RunConfig& c, std::string_view v) { c.train.mlmc.r1 = parse_real(v); }},
        {"mlmc", "r2", [](const RunConfig& c) { return format_double(c.train.mlmc.r2); },
         [](RunConfig& c, std::string_view v) { c.train.mlmc.r2 = parse_real(v); }},
        {"mlmc", "atoms", [](const RunConfig& c) { return to_string(c.train.mlmc.atoms); },
         [](RunConfig& c, std::string_view v) { c.train.mlmc.atoms = atom_mode_from_string(v); }},
        {"mlmc", "coupling", [](const RunConfig& c) { return to_string(c.train.mlmc.coupling); },
         [](RunConfig& c, std::string_view v) { c.train.mlmc.coupling = coupling_from_string(v); }},

        {"model", "hidden", [](const RunConfig& c) { return join(c.train.arch.hidden_widths, size_str); },
         [](RunConfig& c, std::string_view v) {
             c.train.arch.hidden_widths.clear();
             for (auto item : split(v)) c.train.arch.hidden_widths.push_back(parse_size(item));
         }},
        {"model", "components", [](const RunConfig& c) { return size_str(c.train.arch.n_components); },
         [](RunConfig& c, std::string_view v) { c.train.arch.n_components = parse_size(v); }},
        {"model", "activation", [](const RunConfig& c) { return to_string(c.train.arch.activation); },
         [](RunConfig& c, std::string_view v) {
             try {
                 c.train.arch.activation = activation_from_string(v);
             } catch (const std::invalid_argument& e) {
                 throw ConfigError(e.what());
             }
         }},

        {"metrics", "posterior_samples", [](const RunConfig& c) { return size_str(c.metrics.posterior_samples); },
         [](RunConfig& c, std::string_view v) { c.metrics.posterior_samples = parse_size(v); }},
        {"metrics", "abc_epsilon", [](const RunConfig& c) { return format_double(c.metrics.abc_epsilon); },
         [](RunConfig& c, std::string_view v) { c.metrics.abc_epsilon = parse_real(v); }},
        {"metrics", "abc_budget", [](const RunConfig& c) { return size_str(c.metrics.abc_budget); },
         [](RunConfig& c, std::string_view v) { c.metrics.abc_budget = parse_size(v); }},
        {"metrics", "c2st_folds", [](const RunConfig& c) { return size_str(c.metrics.c2st_folds); },
         [](RunConfig& c, std::string_view v) { c.metrics.c2st_folds = parse_size(v); }},
        {"metrics", "mmd", [](const RunConfig& c) { return std::string(c.metrics.mmd ? "true" : "false"); },
         [](RunConfig& c, std::string_view v) { c.metrics.mmd = parse_bool(v); }},
        {"metrics", "c2st", [](const RunConfig& c) { return std::string(c.metrics.c2st ? "true" : "false"); },
         [](RunConfig& c, std::string_view v) { c.metrics.c2st = parse_bool(v); }},
    };
    return f;
}

}  // namespace

void set_value(RunConfig& c, std::string_view section, std::string_view key, std::string_view value) {
    for (const Field& f : fields()) {
        if (section == f.section && key == f.key) {
            try {
                f.set(c, value);
            } catch (const ConfigError& e) {
                throw ConfigError(std::string(section) + "." + std::string(key) + ": " + e.what());
            }
            return;
        }
    }
    throw ConfigError("unknown config key: " + std::string(section) + "." + std::string(key));
}

std::string to_ini(const RunConfig& c) {
    std::string out, section;
    for (const Field& f : fields()) {
        if (section != f.section) {
            if (!section.empty()) out += "\n";
            section = f.section;
            out += "[" + section + "]\n";
        }
        out += std::string(f.key) + " = " + f.get(c) + "\n";
    }
    return out;
}

RunConfig parse_ini(std::string_view text) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    std::istringstream is{std::string(text)};
    try {
        pt::ini_parser::read_ini(is, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError(std::string("config syntax: ") + e.what());
    }
    const auto known = [](std::string_view section) {
        for (const Field& f : fields())
            if (section == f.section) return true;
        return false;
    };
    // read_ini drops sections without keys, so headers are checked on the raw text
    std::istringstream lines{std::string(text)};
    for (std::string line; std::getline(lines, line);) {
        const auto b = line.find_first_not_of(" \t");
        if (b == std::string::npos || line[b] != '[') continue;
        const auto e = line.find(']', b);
        if (e != std::string::npos && !known(line.substr(b + 1, e - b - 1)))
            throw ConfigError("unknown config section: " + line.substr(b + 1, e - b - 1));
    }
    RunConfig c;
    for (const auto& [section, body] : tree) {
        if (!known(section) || !body.data().empty()) throw ConfigError("unknown config section: " + section);
        for (const auto& [key, node] : body) set_value(c, section, key, node.data());
    }
    return c;
}

RunConfig load_config(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot read config: " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return parse_ini(ss.str());
}

void save_config(const std::string& path, const RunConfig& c) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write config: " + path);
    os << to_ini(c);
    if (!os) throw IoError("write failed: " + path);
}

void apply_override(RunConfig& c, std::string_view assignment) {
    const auto eq = assignment.find('=');
    const auto dot = assignment.find('.');
    if (eq == std::string_view::npos || dot == std::string_view::npos || dot > eq)
        throw ConfigError("override must look like section.key=value: " + std::string(assignment));
    set_value(c, assignment.substr(0, dot), assignment.substr(dot + 1, eq - dot - 1), assignment.substr(eq + 1));
}

std::vector<std::string> config_keys() {
    std::vector<std::string> k;
    for (const Field& f : fields()) k.push_back(std::string(f.section) + "." + f.key);
    return k;
}

bool operator==(const RunConfig& a, const RunConfig& b) { return to_ini(a) == to_ini(b); }

}  // namespace napt
