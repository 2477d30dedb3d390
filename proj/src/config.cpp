#include "camenn/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "camenn/dataset.hpp"
#include "camenn/errors.hpp"

namespace camenn {

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

template <class T>
T parse_number(std::string_view key, std::string_view text) {
    const std::string s = trim(text);
    T value{};
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (ec != std::errc() || ptr != s.data() + s.size() || s.empty())
        throw ConfigError("config key " + std::string(key) + ": cannot parse '" + s + "' as a number");
    return value;
}

double parse_double(std::string_view key, std::string_view text) {
    const std::string s = trim(text);
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key " + std::string(key) + ": cannot parse '" + s + "' as a real number");
    }
}

bool parse_bool(std::string_view key, std::string_view text) {
    const std::string s = trim(text);
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw ConfigError("config key " + std::string(key) + ": expected true or false, got '" + s + "'");
}

std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

TaskKind parse_task(std::string_view key, std::string_view text) {
    const std::string s = trim(text);
    for (TaskKind k : kAllTasks)
        if (s == task_name(k)) return k;
    throw ConfigError("config key " + std::string(key) + ": unknown task '" + s + "'");
}

struct Field {
    std::function<void(RunConfig&, std::string_view key, std::string_view value)> set;
    std::function<std::string(const RunConfig&)> get;
};

const std::map<std::string, Field, std::less<>>& fields() {
    using R = RunConfig;
    auto sz = [](auto getter) {
        return Field{[getter](R& c, std::string_view k, std::string_view v) { getter(c) = parse_number<std::size_t>(k, v); },
                     [getter](const R& c) { return std::to_string(getter(const_cast<R&>(c))); }};
    };
    auto u64 = [](auto getter) {
        return Field{[getter](R& c, std::string_view k, std::string_view v) { getter(c) = parse_number<std::uint64_t>(k, v); },
                     [getter](const R& c) { return std::to_string(getter(const_cast<R&>(c))); }};
    };
    auto real = [](auto getter) {
        return Field{[getter](R& c, std::string_view k, std::string_view v) { getter(c) = parse_double(k, v); },
                     [getter](const R& c) { return fmt_double(getter(const_cast<R&>(c))); }};
    };
    auto flag = [](auto getter) {
        return Field{[getter](R& c, std::string_view k, std::string_view v) { getter(c) = parse_bool(k, v); },
                     [getter](const R& c) { return std::string(getter(const_cast<R&>(c)) ? "true" : "false"); }};
    };
    auto path = [](auto getter) {
        return Field{[getter](R& c, std::string_view, std::string_view v) { getter(c) = trim(v); },
                     [getter](const R& c) { return getter(const_cast<R&>(c)).string(); }};
    };
    static const std::map<std::string, Field, std::less<>> table = {
        {"data.dir", path([](R& c) -> auto& { return c.data_dir; })},
        {"output.dir", path([](R& c) -> auto& { return c.output_dir; })},
        {"provider.seed", u64([](R& c) -> auto& { return c.provider_seed; })},
        {"provider.import", path([](R& c) -> auto& { return c.provider_import; })},
        {"encoder.d_model", sz([](R& c) -> auto& { return c.model.encoder.d_model; })},
        {"encoder.num_heads", sz([](R& c) -> auto& { return c.model.encoder.num_heads; })},
        {"encoder.num_blocks", sz([](R& c) -> auto& { return c.model.encoder.num_blocks; })},
        {"encoder.ffn_hidden", sz([](R& c) -> auto& { return c.model.encoder.ffn_hidden; })},
        {"encoder.dropout", real([](R& c) -> auto& { return c.model.encoder.dropout; })},
        {"moe.num_experts", sz([](R& c) -> auto& { return c.model.moe.num_experts; })},
        {"moe.top_k", sz([](R& c) -> auto& { return c.model.moe.top_k; })},
        {"moe.expert_kind",
         Field{[](R& c, std::string_view, std::string_view v) { c.model.moe.expert_kind = parse_expert_kind(trim(v)); },
               [](const R& c) { return std::string(expert_kind_name(c.model.moe.expert_kind)); }}},
        {"moe.gating_mode",
         Field{[](R& c, std::string_view, std::string_view v) { c.model.moe.gating_mode = parse_gating_mode(trim(v)); },
               [](const R& c) { return std::string(gating_mode_name(c.model.moe.gating_mode)); }}},
        {"model.max_behavior", sz([](R& c) -> auto& { return c.model.max_behavior; })},
        {"model.num_contexts", sz([](R& c) -> auto& { return c.model.num_contexts; })},
        {"tasks.lambda_ita", real([](R& c) -> auto& { return c.weights.lambda[0]; })},
        {"tasks.lambda_tia", real([](R& c) -> auto& { return c.weights.lambda[1]; })},
        {"tasks.lambda_cvr", real([](R& c) -> auto& { return c.weights.lambda[2]; })},
        {"tasks.negative_ratio", sz([](R& c) -> auto& { return c.train.negative_ratio; })},
        {"tasks.cvr_head",
         Field{[](R& c, std::string_view k, std::string_view v) {
                   const std::string s = trim(v);
                   if (s == "mean_pool")
                       c.model.cvr_head = HeadPooling::MeanPool;
                   else if (s == "cls")
                       c.model.cvr_head = HeadPooling::Cls;
                   else
                       throw ConfigError("config key " + std::string(k) + ": expected mean_pool or cls, got '" + s + "'");
               },
               [](const R& c) { return std::string(c.model.cvr_head == HeadPooling::Cls ? "cls" : "mean_pool"); }}},
        {"optim.lr", real([](R& c) -> auto& { return c.optim.lr; })},
        {"optim.beta1", real([](R& c) -> auto& { return c.optim.beta1; })},
        {"optim.beta2", real([](R& c) -> auto& { return c.optim.beta2; })},
        {"optim.eps", real([](R& c) -> auto& { return c.optim.eps; })},
        {"optim.weight_decay", real([](R& c) -> auto& { return c.optim.weight_decay; })},
        {"optim.decoupled", flag([](R& c) -> auto& { return c.optim.decoupled; })},
        {"train.batch_size", sz([](R& c) -> auto& { return c.train.batch_size; })},
        {"train.epochs", sz([](R& c) -> auto& { return c.train.epochs; })},
        {"train.patience", sz([](R& c) -> auto& { return c.train.patience; })},
        {"train.max_steps_per_epoch", sz([](R& c) -> auto& { return c.train.max_steps_per_epoch; })},
        {"train.validation_fraction", real([](R& c) -> auto& { return c.train.validation_fraction; })},
        {"train.alignment_fraction", real([](R& c) -> auto& { return c.train.alignment_fraction; })},
        {"train.eval_alignment_items", sz([](R& c) -> auto& { return c.train.eval_alignment_items; })},
        {"train.seed", u64([](R& c) -> auto& { return c.train.seed; })},
        {"similarity.task",
         Field{[](R& c, std::string_view k, std::string_view v) { c.similarity_task = parse_task(k, v); },
               [](const R& c) { return std::string(task_name(c.similarity_task)); }}},
    };
    return table;
}

}  // namespace

RunConfig::RunConfig() {
    model.encoder.d_model = 16;
    model.encoder.num_heads = 8;
}

void RunConfig::set(std::string_view key, std::string_view value) {
    const auto& table = fields();
    auto it = table.find(trim(key));
    if (it == table.end()) throw ConfigError("unknown config key '" + trim(key) + "'");
    it->second.set(*this, it->first, value);
}

void RunConfig::set_assignment(std::string_view assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos) throw ConfigError("expected key=value, got '" + std::string(assignment) + "'");
    set(assignment.substr(0, eq), assignment.substr(eq + 1));
}

std::string RunConfig::to_string() const {
    std::string out;
    for (const auto& [key, field] : fields()) out += key + " = " + field.get(*this) + "\n";
    return out;
}

std::string RunConfig::hash() const { return checksum_hex(to_string()); }

void RunConfig::validate() const {
    model.validate();
    weights.validate();
    if (train.batch_size == 0) throw ConfigError("train.batch_size must be positive");
    if (train.epochs == 0) throw ConfigError("train.epochs must be positive");
    if (!(train.validation_fraction >= 0.0 && train.validation_fraction < 1.0))
        throw ConfigError("train.validation_fraction must lie in [0,1)");
    if (!(train.alignment_fraction > 0.0 && train.alignment_fraction < 1.0))
        throw ConfigError("train.alignment_fraction must lie in (0,1)");
    if (!(optim.lr >= 0.0) || !(optim.beta1 >= 0.0 && optim.beta1 < 1.0) || !(optim.beta2 >= 0.0 && optim.beta2 < 1.0) ||
        !(optim.eps > 0.0) || !(optim.weight_decay >= 0.0))
        throw ConfigError("invalid optimizer settings");
}

void apply_config_text(RunConfig& config, std::string_view ini_text) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    std::istringstream in{std::string(ini_text)};
    try {
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError("config line " + std::to_string(e.line()) + ": " + e.message());
    }
    for (const auto& [section, body] : tree) {
        if (body.empty()) {
            config.set(section, body.data());
            continue;
        }
        for (const auto& [key, leaf] : body) config.set(section + "." + key, leaf.data());
    }
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    RunConfig cfg;
    apply_config_text(cfg, ss.str());
    return cfg;
}

}  // namespace camenn
