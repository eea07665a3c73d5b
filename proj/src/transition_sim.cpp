#include "powerem/transition_sim.hpp"

#include "powerem/error.hpp"
#include "powerem/util.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace powerem {

namespace {

constexpr double kHoursPerYearThousands = 8.76;  // TWh per GW-year
constexpr double kShareTolerance = 1e-9;
constexpr double kDriftLimit = 1e-6;
constexpr int kMaxSubdivisionLevel = 6;  // dt / 64

const std::set<std::string> kVariableRenewables{"solar", "onshore", "offshore"};

// Input id -> technologies whose field it overrides.
struct Override {
    const char* input;
    std::vector<std::string> techs;
};

const std::vector<Override> kLifetimeInputs{{"solar_lifetime", {"solar"}},
                                            {"wind_lifetime", {"onshore", "offshore"}}};
const std::vector<Override> kLeadInputs{{"solar_lead", {"solar"}},
                                        {"onshore_lead", {"onshore"}},
                                        {"offshore_lead", {"offshore"}}};
const std::vector<Override> kLearningInputs{{"solar_learning_exp", {"solar"}},
                                            {"wind_learning_exp", {"onshore", "offshore"}}};
const std::vector<Override> kFuelPriceInputs{{"coal_price", {"coal"}}, {"gas_price", {"ccgt"}}};

template <class Fn>
void for_each_override(const SimConfig& config, const PhysicalInputs& inputs,
                       const std::vector<Override>& table, Fn&& apply) {
    for (const auto& o : table) {
        auto it = inputs.values.find(o.input);
        if (it == inputs.values.end()) continue;
        for (const auto& tech : o.techs)
            for (std::size_t t = 0; t < config.technologies.size(); ++t)
                if (config.technologies[t].id == tech) apply(t, it->second);
    }
}

std::string year_region(double year, const std::string& region) {
    return "year " + format_double(year) + ", region " + region;
}

Technology tech(std::string id, TechCategory cat, double capex, double om, double fuel, double cf,
                double life, double lead, double emission, double learning, double cumulative) {
    return {std::move(id), cat, capex, om, fuel, cf, life, lead, emission, learning, cumulative};
}

RegionState region(std::string id, std::vector<double> shares, double demand, double growth,
                   double rate, double coal_rate, std::vector<double> fuel) {
    RegionState r;
    r.id = std::move(id);
    r.shares = std::move(shares);
    r.demand = demand;
    r.demand_growth = growth;
    r.discount_rate.assign(r.shares.size(), rate);
    r.discount_rate[0] = coal_rate;
    r.gamma.assign(r.shares.size(), 0.0);
    r.fuel_cost = std::move(fuel);
    return r;
}

} // namespace

std::size_t SimConfig::tech_index(std::string_view id) const {
    for (std::size_t t = 0; t < technologies.size(); ++t)
        if (technologies[t].id == id) return t;
    fail(ErrorCode::not_found, "unknown technology '" + std::string(id) + "'");
}

SimConfig default_sim_config() {
    SimConfig c;
    using C = TechCategory;
    // id, category, capex $/kW, O&M $/MWh, fuel $/MWh, CF, life, lead, tCO2/MWh, learning, W0 GW
    c.technologies = {
        tech("coal", C::fossil, 1500, 5, 25, 0.60, 40, 4.0, 0.95, 0.0, 2300),
        tech("ccgt", C::fossil, 1000, 4, 45, 0.50, 30, 2.5, 0.37, 0.0, 1900),
        tech("oil", C::fossil, 1000, 6, 90, 0.30, 30, 2.0, 0.70, 0.0, 450),
        tech("nuclear", C::other_low_carbon, 6000, 15, 8, 0.90, 60, 7.0, 0.0, 0.0, 420),
        tech("hydro", C::other_low_carbon, 2500, 5, 0, 0.40, 80, 5.0, 0.0, 0.0, 1350),
        tech("onshore", C::renewable, 1300, 8, 0, 0.30, 30, 1.5, 0.0, -0.19, 840),
        tech("offshore", C::renewable, 3200, 15, 0, 0.42, 30, 3.0, 0.0, -0.19, 64),
        tech("solar", C::renewable, 850, 5, 0, 0.17, 30, 1.0, 0.0, -0.319, 1060),
    };
    //                 coal  ccgt  oil    nuc   hydro onsh  offsh  solar
    c.regions = {
        region("CN", {0.450, 0.050, 0.005, 0.020, 0.160, 0.140, 0.012, 0.163}, 8800, 0.040, 0.060, 0.065,
               {28, 60, 90, 8, 0, 0, 0, 0}),
        region("US", {0.160, 0.430, 0.030, 0.080, 0.080, 0.115, 0.001, 0.104}, 4300, 0.015, 0.055, 0.070,
               {22, 30, 90, 8, 0, 0, 0, 0}),
        region("IN", {0.520, 0.060, 0.002, 0.017, 0.120, 0.100, 0.001, 0.180}, 1800, 0.060, 0.090, 0.110,
               {20, 65, 90, 8, 0, 0, 0, 0}),
        region("RGN", {0.120, 0.300, 0.040, 0.100, 0.160, 0.130, 0.020, 0.130}, 6000, 0.010, 0.050, 0.060,
               {30, 55, 90, 8, 0, 0, 0, 0}),
        region("RGS", {0.250, 0.300, 0.080, 0.020, 0.200, 0.050, 0.001, 0.099}, 7500, 0.035, 0.090, 0.100,
               {25, 45, 90, 8, 0, 0, 0, 0}),
    };
    return c;
}

void validate_config(const SimConfig& c) {
    auto bad = [](const std::string& what) { fail(ErrorCode::invalid_input, "sim config: " + what); };
    if (c.start_year >= c.end_year) bad("start_year must precede end_year");
    if (!(c.timestep > 0.0)) bad("timestep must be positive");
    if (!(c.substitution_speed > 0.0)) bad("substitution_speed must be positive");
    if (!(c.choice_spread > 0.0)) bad("choice_spread must be positive");
    if (c.technologies.empty()) bad("no technologies");
    if (c.regions.empty()) bad("no regions");
    const double span = c.end_year - c.start_year;
    const double steps = std::round(span / c.timestep);
    if (std::abs(steps * c.timestep - span) > 1e-9) bad("timestep must divide the simulated period");
    for (int y : c.report_years) {
        if (y < c.start_year || y > c.end_year) bad("report year " + std::to_string(y) + " outside run");
        const double k = (y - c.start_year) / c.timestep;
        if (std::abs(k - std::round(k)) > 1e-9)
            bad("timestep must divide report-year offset for " + std::to_string(y));
    }
    std::set<std::string> ids;
    for (const auto& t : c.technologies) {
        if (!ids.insert(t.id).second) bad("duplicate technology " + t.id);
        if (!(t.capacity_factor > 0.0 && t.capacity_factor <= 1.0)) bad(t.id + ": capacity_factor outside (0,1]");
        if (!(t.lifetime > 0.0)) bad(t.id + ": lifetime must be positive");
        if (!(t.lead_time >= 0.0)) bad(t.id + ": lead_time must be non-negative");
        if (!(t.emission_factor >= 0.0)) bad(t.id + ": emission_factor must be non-negative");
        if (!(t.learning_exponent <= 0.0)) bad(t.id + ": learning_exponent must be <= 0");
        if (!(t.cumulative_capacity > 0.0)) bad(t.id + ": cumulative_capacity must be positive");
        if (!(t.investment_cost >= 0.0)) bad(t.id + ": investment_cost must be non-negative");
    }
    const std::size_t n = c.technologies.size();
    for (const auto& r : c.regions) {
        if (r.shares.size() != n) bad(r.id + ": shares size mismatch");
        if (r.discount_rate.size() != n) bad(r.id + ": discount_rate size mismatch");
        if (!r.gamma.empty() && r.gamma.size() != n) bad(r.id + ": gamma size mismatch");
        if (!r.fuel_cost.empty() && r.fuel_cost.size() != n) bad(r.id + ": fuel_cost size mismatch");
        double sum = 0.0;
        for (double s : r.shares) {
            if (!(s >= 0.0)) bad(r.id + ": negative share");
            sum += s;
        }
        if (std::abs(sum - 1.0) > kShareTolerance) bad(r.id + ": shares must sum to 1");
        if (!(r.demand > 0.0)) bad(r.id + ": demand must be positive");
        for (double d : r.discount_rate)
            if (!(d >= 0.0)) bad(r.id + ": negative discount rate");
    }
}

double capital_recovery_factor(double rate, double lifetime) {
    if (!(rate >= 0.0)) fail(ErrorCode::invalid_input, "discount rate must be non-negative");
    if (!(lifetime > 0.0)) fail(ErrorCode::invalid_input, "lifetime must be positive");
    if (rate == 0.0) return 1.0 / lifetime;
    // expm1/log1p keep small rates accurate where (1+r)^L - 1 would cancel
    const double growth = lifetime * std::log1p(rate);
    return rate / -std::expm1(-growth);
}

double lcoe(const CostInputs& in) {
    if (!(in.capacity_factor > 0.0)) fail(ErrorCode::invalid_input, "capacity factor must be positive");
    const double crf = capital_recovery_factor(in.discount_rate, in.lifetime);
    const double upfront = in.investment_cost * (1.0 - in.subsidy) *
                           std::pow(1.0 + in.discount_rate, in.lead_time + in.grid_lead);
    return crf * upfront * 1000.0 / (8760.0 * in.capacity_factor) + in.om_cost + in.fuel_cost +
           in.carbon_price * in.emission_factor + in.gamma - in.feed_in_tariff;
}

double preference(double lcoe_i, double lcoe_j, double choice_spread) {
    const double z = (lcoe_i - lcoe_j) / choice_spread;
    // evaluate the smaller of F_ij, F_ji directly and take the complement, so F_ij + F_ji == 1
    if (z >= 0.0) {
        const double e = std::exp(-z);
        return e / (1.0 + e);
    }
    return 1.0 - preference(lcoe_j, lcoe_i, choice_spread);
}

RegionContext resolve_region(const SimConfig& config, const RegionState& region,
                             const PhysicalInputs& inputs) {
    const std::size_t n = config.technologies.size();
    RegionContext ctx;
    ctx.policy = inputs.policy_for(region.id);
    ctx.grid_lead = inputs.value_or("grid_lead", 0.0);
    ctx.demand_growth = region.demand_growth * (1.0 + inputs.value_or("demand_growth_shift", 0.0));
    const double shift = inputs.value_or("discount_shift", 0.0);
    const double om_mult = inputs.value_or("om_multiplier", 1.0);
    const double cf_mult = inputs.value_or("vre_cf_multiplier", 1.0);
    const double capex_mult = inputs.value_or("nonvre_capex_multiplier", 1.0);

    ctx.techs.resize(n);
    for (std::size_t t = 0; t < n; ++t) {
        const auto& tech = config.technologies[t];
        auto& p = ctx.techs[t];
        const bool vre = kVariableRenewables.contains(tech.id);
        p.capacity_factor = vre ? std::min(1.0, tech.capacity_factor * cf_mult) : tech.capacity_factor;
        p.lifetime = tech.lifetime;
        p.lead_time = tech.lead_time;
        p.om_cost = tech.om_cost * om_mult;
        p.fuel_cost = region.fuel_cost.empty() ? tech.fuel_cost : region.fuel_cost[t];
        p.capex_multiplier = vre ? 1.0 : capex_mult;
        p.discount_rate = effective_discount_rate(region.discount_rate[t], shift);
        p.emission_factor = tech.emission_factor;
        p.gamma = region.gamma.empty() ? 0.0 : region.gamma[t];
        p.subsidy = ctx.policy.subsidy_for(tech.id);
        p.feed_in_tariff = ctx.policy.feed_in_tariff_for(tech.id);
        p.phase_out = tech.category == TechCategory::fossil ? ctx.policy.phase_out_for(tech.id) : 0.0;
    }
    for_each_override(config, inputs, kLifetimeInputs, [&](std::size_t t, double v) { ctx.techs[t].lifetime = v; });
    for_each_override(config, inputs, kLeadInputs, [&](std::size_t t, double v) { ctx.techs[t].lead_time = v; });
    for_each_override(config, inputs, kFuelPriceInputs, [&](std::size_t t, double z) {
        ctx.techs[t].fuel_cost = std::max(0.0, ctx.techs[t].fuel_cost * (1.0 + config.fuel_price_sd_fraction * z));
    });
    for (std::size_t t = 0; t < n; ++t)
        if (!(ctx.techs[t].lead_time + ctx.grid_lead > 0.0))
            fail(ErrorCode::invalid_input, config.technologies[t].id + ": total lead time must be positive");
    return ctx;
}

std::vector<double> region_lcoe(const RegionContext& ctx, std::span<const double> investment_cost,
                                double year) {
    const double carbon = ctx.policy.carbon_price(year);
    std::vector<double> out(ctx.techs.size());
    for (std::size_t t = 0; t < ctx.techs.size(); ++t) {
        const auto& p = ctx.techs[t];
        out[t] = lcoe({.investment_cost = investment_cost[t] * p.capex_multiplier,
                       .discount_rate = p.discount_rate,
                       .lifetime = p.lifetime,
                       .capacity_factor = p.capacity_factor,
                       .om_cost = p.om_cost,
                       .fuel_cost = p.fuel_cost,
                       .emission_factor = p.emission_factor,
                       .carbon_price = carbon,
                       .lead_time = p.lead_time,
                       .grid_lead = ctx.grid_lead,
                       .gamma = p.gamma,
                       .subsidy = p.subsidy,
                       .feed_in_tariff = p.feed_in_tariff});
    }
    return out;
}

namespace {

double total_capacity(std::span<const double> shares, double demand, const RegionContext& ctx) {
    double cf = 0.0;
    for (std::size_t t = 0; t < shares.size(); ++t) cf += shares[t] * ctx.techs[t].capacity_factor;
    return demand / (kHoursPerYearThousands * cf);
}

// One explicit Euler substep. Returns false when a share would leave [0,1].
// gain[i*n + j] is the gross rate at which share flows from j into i;
// retire[i] is the rate at which phased-out retirements of i are barred from
// self-replacement and handed to permitted technologies (weights `accept`).
bool replicator_substep(std::span<const double> gain, std::span<const double> retire,
                        std::span<const double> accept, std::vector<double>& shares, double h) {
    const std::size_t n = shares.size();
    std::vector<double> delta(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        if (shares[i] == 0.0) continue;
        double rate = 0.0;
        for (std::size_t j = 0; j < n; ++j)
            rate += shares[j] * (gain[i * n + j] - gain[j * n + i]);
        delta[i] += shares[i] * rate * h;
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (retire[i] == 0.0 || shares[i] == 0.0) continue;
        double total = 0.0;
        for (std::size_t j = 0; j < n; ++j)
            if (j != i) total += shares[j] * accept[i * n + j];
        if (total <= 0.0) continue;
        const double moved = shares[i] * retire[i] * h;
        delta[i] -= moved;
        for (std::size_t j = 0; j < n; ++j)
            if (j != i) delta[j] += moved * shares[j] * accept[i * n + j] / total;
    }
    for (std::size_t i = 0; i < n; ++i) {
        const double next = shares[i] + delta[i];
        if (next < 0.0 || next > 1.0) return false;
    }
    for (std::size_t i = 0; i < n; ++i) shares[i] += delta[i];
    return true;
}

} // namespace

StepResult step(const SimConfig& config, const RegionState& state, const RegionContext& ctx,
                std::span<const double> investment_cost, double year, double dt) {
    if (!(dt > 0.0)) fail(ErrorCode::invalid_input, "step: dt must be positive");
    const std::size_t n = state.shares.size();
    const auto cost = region_lcoe(ctx, investment_cost, year);

    // gain[i*n + j]: gross rate at which capacity share flows from j into i
    std::vector<double> gain(n * n, 0.0);
    // accept[i*n + j]: preference of j over i, restricted to technologies j may build
    std::vector<double> accept(n * n, 0.0);
    std::vector<double> retire(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double lead = ctx.techs[i].lead_time + ctx.grid_lead;
        const double inflow_scale = 1.0 - ctx.techs[i].phase_out;
        retire[i] = ctx.techs[i].phase_out / ctx.techs[i].lifetime;
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            const double f = preference(cost[i], cost[j], config.choice_spread);
            const double a = config.substitution_speed / (lead * ctx.techs[j].lifetime);
            gain[i * n + j] = a * f * inflow_scale;
            accept[i * n + j] = (1.0 - f) * (1.0 - ctx.techs[j].phase_out);
        }
    }

    StepResult result;
    std::vector<double> shares;
    bool stable = false;
    for (int level = 0; level <= kMaxSubdivisionLevel && !stable; ++level) {
        const int substeps = 1 << level;
        const double h = dt / substeps;
        shares = state.shares;
        stable = true;
        for (int s = 0; s < substeps && stable; ++s) stable = replicator_substep(gain, retire, accept, shares, h);
        result.substeps = substeps;
    }
    if (!stable)
        fail(ErrorCode::numerical_failure, "step unstable at dt/64 (" + year_region(year, state.id) + ")");

    const double sum = std::accumulate(shares.begin(), shares.end(), 0.0);
    result.share_sum_before_renormalization = sum;
    if (std::abs(sum - 1.0) > kDriftLimit)
        fail(ErrorCode::numerical_failure, "share sum drifted to " + format_double(sum) + " (" +
                                               year_region(year, state.id) + ")");
    for (auto& s : shares) s /= sum;

    result.next = state;
    result.next.shares = shares;
    result.next.demand = state.demand * std::pow(1.0 + ctx.demand_growth, dt);

    const double k_old = total_capacity(state.shares, state.demand, ctx);
    const double k_new = total_capacity(result.next.shares, result.next.demand, ctx);
    result.additions.resize(n);
    for (std::size_t t = 0; t < n; ++t) {
        const double old_cap = state.shares[t] * k_old;
        const double new_cap = result.next.shares[t] * k_new;
        result.additions[t] = std::max(0.0, new_cap - old_cap) + old_cap * dt / ctx.techs[t].lifetime;
    }
    return result;
}

LearningState initial_learning(const SimConfig& config, const PhysicalInputs& inputs) {
    LearningState s;
    for (const auto& t : config.technologies) {
        s.learning_exponent.push_back(t.learning_exponent);
        s.cumulative_capacity.push_back(t.cumulative_capacity);
        s.investment_cost.push_back(t.investment_cost);
    }
    for_each_override(config, inputs, kLearningInputs, [&](std::size_t t, double b) {
        if (b > 0.0) fail(ErrorCode::invalid_input, "learning exponent must be <= 0");
        s.learning_exponent[t] = b;
    });
    return s;
}

void apply_learning(const SimConfig& config, LearningState& state, std::span<const double> additions) {
    for (std::size_t t = 0; t < config.technologies.size(); ++t) {
        const auto& tech = config.technologies[t];
        state.cumulative_capacity[t] += additions[t];
        state.investment_cost[t] = tech.investment_cost *
                                   std::pow(state.cumulative_capacity[t] / tech.cumulative_capacity,
                                            state.learning_exponent[t]);
    }
}

RegionReport make_report(const SimConfig& config, const std::string& region_id,
                         std::span<const double> shares, double demand,
                         std::span<const double> capacity_factor, std::span<const double> cost) {
    const std::size_t n = shares.size();
    RegionReport r;
    r.region = region_id;
    r.shares.assign(shares.begin(), shares.end());
    r.lcoe.assign(cost.begin(), cost.end());
    double cf = 0.0;
    for (std::size_t t = 0; t < n; ++t) cf += shares[t] * capacity_factor[t];
    const double total = demand / (kHoursPerYearThousands * cf);
    r.capacity.resize(n);
    r.generation.resize(n);
    for (std::size_t t = 0; t < n; ++t) {
        r.capacity[t] = shares[t] * total;
        r.generation[t] = r.capacity[t] * kHoursPerYearThousands * capacity_factor[t];
        r.emissions += r.generation[t] * config.technologies[t].emission_factor;
        if (config.technologies[t].category == TechCategory::renewable) r.renewables_share += shares[t];
        r.weighted_cost += shares[t] * cost[t];
    }
    r.renewables_share = std::clamp(r.renewables_share, 0.0, 1.0);
    return r;
}

namespace {

RegionReport aggregate(const SimConfig& config, const std::vector<RegionReport>& regions) {
    const std::size_t n = config.technologies.size();
    RegionReport g;
    g.region = "global";
    g.capacity.assign(n, 0.0);
    g.generation.assign(n, 0.0);
    g.lcoe.assign(n, 0.0);
    g.shares.assign(n, 0.0);
    double total = 0.0;
    double cost = 0.0;
    for (const auto& r : regions) {
        g.emissions += r.emissions;
        for (std::size_t t = 0; t < n; ++t) {
            g.capacity[t] += r.capacity[t];
            g.generation[t] += r.generation[t];
            g.lcoe[t] += r.capacity[t] * r.lcoe[t];
            cost += r.capacity[t] * r.lcoe[t];
            total += r.capacity[t];
        }
    }
    double renewable = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
        g.lcoe[t] = g.capacity[t] > 0.0 ? g.lcoe[t] / g.capacity[t] : 0.0;
        g.shares[t] = g.capacity[t] / total;
        if (config.technologies[t].category == TechCategory::renewable) renewable += g.capacity[t];
    }
    g.renewables_share = std::clamp(renewable / total, 0.0, 1.0);
    g.weighted_cost = cost / total;
    return g;
}

} // namespace

SimOutput simulate(const SimConfig& config, const PhysicalInputs& inputs, const StepObserver& observer) {
    validate_config(config);
    const std::size_t n = config.technologies.size();
    const std::size_t nr = config.regions.size();

    std::vector<RegionState> states = config.regions;
    for (auto& s : states) {
        if (s.gamma.empty()) s.gamma.assign(n, 0.0);
    }
    std::vector<RegionContext> contexts;
    contexts.reserve(nr);
    for (const auto& s : states) contexts.push_back(resolve_region(config, s, inputs));
    LearningState learning = initial_learning(config, inputs);

    SimOutput out;
    for (const auto& t : config.technologies) out.technologies.push_back(t.id);

    const int steps = static_cast<int>(std::lround((config.end_year - config.start_year) / config.timestep));
    auto record = [&](double year) {
        for (int ry : config.report_years) {
            if (std::abs(ry - year) > 1e-9) continue;
            YearReport yr;
            yr.year = ry;
            for (std::size_t r = 0; r < nr; ++r) {
                std::vector<double> cf(n);
                for (std::size_t t = 0; t < n; ++t) cf[t] = contexts[r].techs[t].capacity_factor;
                const auto cost = region_lcoe(contexts[r], learning.investment_cost, year);
                yr.regions.push_back(make_report(config, states[r].id, states[r].shares, states[r].demand, cf, cost));
            }
            yr.global = aggregate(config, yr.regions);
            out.years.push_back(std::move(yr));
        }
    };

    record(config.start_year);
    std::vector<double> additions(n);
    for (int k = 0; k < steps; ++k) {
        const double year = config.start_year + k * config.timestep;
        std::fill(additions.begin(), additions.end(), 0.0);
        for (std::size_t r = 0; r < nr; ++r) {
            auto res = step(config, states[r], contexts[r], learning.investment_cost, year, config.timestep);
            for (std::size_t t = 0; t < n; ++t) additions[t] += res.additions[t];
            states[r] = std::move(res.next);
            const double sum = std::accumulate(states[r].shares.begin(), states[r].shares.end(), 0.0);
            out.max_share_drift = std::max(out.max_share_drift, std::abs(sum - 1.0));
            if (observer) observer(year + config.timestep, r, states[r].shares);
        }
        apply_learning(config, learning, additions);
        record(config.start_year + (k + 1) * config.timestep);
    }
    return out;
}

const char* output_units(std::string_view output) {
    if (output == "solar_capacity_GW" || output == "onshore_capacity_GW") return "GW";
    if (output == "emissions_Mt") return "MtCO2/yr";
    if (output == "renewables_share") return "fraction";
    if (output == "weighted_cost") return "currency/MWh";
    return "";
}

std::map<std::string, double> extract_outputs(const SimOutput& out, const std::string& region_id, int year) {
    for (const auto& yr : out.years) {
        if (yr.year != year) continue;
        const RegionReport* rep = nullptr;
        if (region_id == "global") {
            rep = &yr.global;
        } else {
            for (const auto& r : yr.regions)
                if (r.region == region_id) rep = &r;
        }
        if (!rep) fail(ErrorCode::not_found, "unknown region '" + region_id + "'");
        auto capacity_of = [&](const char* tech) {
            for (std::size_t t = 0; t < out.technologies.size(); ++t)
                if (out.technologies[t] == tech) return rep->capacity[t];
            return 0.0;
        };
        return {{"solar_capacity_GW", capacity_of("solar")},
                {"onshore_capacity_GW", capacity_of("onshore")},
                {"emissions_Mt", rep->emissions},
                {"renewables_share", rep->renewables_share},
                {"weighted_cost", rep->weighted_cost}};
    }
    fail(ErrorCode::not_found, "year " + std::to_string(year) + " is not a report year");
}

const char* to_string(TechCategory category) {
    switch (category) {
        case TechCategory::fossil: return "fossil";
        case TechCategory::renewable: return "renewable";
        case TechCategory::other_low_carbon: return "other-low-carbon";
    }
    return "fossil";
}

nlohmann::json to_json(const SimConfig& c) {
    nlohmann::json j;
    j["version"] = 1;
    j["start_year"] = c.start_year;
    j["end_year"] = c.end_year;
    j["timestep"] = c.timestep;
    j["report_years"] = c.report_years;
    j["substitution_speed"] = c.substitution_speed;
    j["choice_spread"] = c.choice_spread;
    j["fuel_price_sd_fraction"] = c.fuel_price_sd_fraction;
    auto techs = nlohmann::json::array();
    for (const auto& t : c.technologies)
        techs.push_back({{"id", t.id},
                         {"category", to_string(t.category)},
                         {"investment_cost", t.investment_cost},
                         {"om_cost", t.om_cost},
                         {"fuel_cost", t.fuel_cost},
                         {"capacity_factor", t.capacity_factor},
                         {"lifetime", t.lifetime},
                         {"lead_time", t.lead_time},
                         {"emission_factor", t.emission_factor},
                         {"learning_exponent", t.learning_exponent},
                         {"cumulative_capacity", t.cumulative_capacity}});
    j["technologies"] = std::move(techs);
    auto regions = nlohmann::json::array();
    for (const auto& r : c.regions)
        regions.push_back({{"id", r.id},
                           {"shares", r.shares},
                           {"demand", r.demand},
                           {"demand_growth", r.demand_growth},
                           {"discount_rate", r.discount_rate},
                           {"gamma", r.gamma},
                           {"fuel_cost", r.fuel_cost}});
    j["regions"] = std::move(regions);
    return j;
}

SimConfig sim_config_from_json(const nlohmann::json& j) {
    static const std::map<std::string, TechCategory> categories{
        {"fossil", TechCategory::fossil},
        {"renewable", TechCategory::renewable},
        {"other-low-carbon", TechCategory::other_low_carbon}};
    try {
        SimConfig c;
        c.start_year = j.value("start_year", c.start_year);
        c.end_year = j.value("end_year", c.end_year);
        c.timestep = j.value("timestep", c.timestep);
        c.report_years = j.value("report_years", c.report_years);
        c.substitution_speed = j.value("substitution_speed", c.substitution_speed);
        c.choice_spread = j.value("choice_spread", c.choice_spread);
        c.fuel_price_sd_fraction = j.value("fuel_price_sd_fraction", c.fuel_price_sd_fraction);
        for (const auto& t : j.at("technologies")) {
            Technology tech;
            tech.id = t.at("id").get<std::string>();
            auto cat = categories.find(t.at("category").get<std::string>());
            if (cat == categories.end()) fail(ErrorCode::invalid_input, tech.id + ": unknown category");
            tech.category = cat->second;
            tech.investment_cost = t.at("investment_cost").get<double>();
            tech.om_cost = t.value("om_cost", 0.0);
            tech.fuel_cost = t.value("fuel_cost", 0.0);
            tech.capacity_factor = t.at("capacity_factor").get<double>();
            tech.lifetime = t.at("lifetime").get<double>();
            tech.lead_time = t.at("lead_time").get<double>();
            tech.emission_factor = t.value("emission_factor", 0.0);
            tech.learning_exponent = t.value("learning_exponent", 0.0);
            tech.cumulative_capacity = t.at("cumulative_capacity").get<double>();
            c.technologies.push_back(std::move(tech));
        }
        for (const auto& r : j.at("regions")) {
            RegionState s;
            s.id = r.at("id").get<std::string>();
            s.shares = r.at("shares").get<std::vector<double>>();
            s.demand = r.at("demand").get<double>();
            s.demand_growth = r.value("demand_growth", 0.0);
            s.discount_rate = r.at("discount_rate").get<std::vector<double>>();
            s.gamma = r.value("gamma", std::vector<double>{});
            s.fuel_cost = r.value("fuel_cost", std::vector<double>{});
            c.regions.push_back(std::move(s));
        }
        validate_config(c);
        return c;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::invalid_input, std::string("malformed sim config: ") + e.what());
    }
}

SimConfig load_sim_config(const std::filesystem::path& path) {
    try {
        return sim_config_from_json(nlohmann::json::parse(read_file(path)));
    } catch (const nlohmann::json::parse_error& e) {
        fail(ErrorCode::invalid_input, path.string() + ": " + e.what());
    }
}

void save_sim_config(const SimConfig& config, const std::filesystem::path& path) {
    write_file_atomic(path, to_json(config).dump(2) + "\n");
}

std::string sim_output_to_csv(const SimOutput& out) {
    CsvTable table;
    table.header = {"year", "region", "technology", "share", "capacity_GW", "generation_TWh", "lcoe"};
    for (const auto& yr : out.years) {
        auto emit = [&](const RegionReport& r) {
            for (std::size_t t = 0; t < out.technologies.size(); ++t)
                table.rows.push_back({std::to_string(yr.year), r.region, out.technologies[t],
                                      format_double(r.shares[t]), format_double(r.capacity[t]),
                                      format_double(r.generation[t]), format_double(r.lcoe[t])});
        };
        for (const auto& r : yr.regions) emit(r);
        emit(yr.global);
    }
    return to_csv(table);
}

nlohmann::json sim_summary_json(const SimOutput& out) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& yr : out.years) {
        auto& entry = j[std::to_string(yr.year)];
        for (const auto& r : yr.regions) entry[r.region] = extract_outputs(out, r.region, yr.year);
        entry["global"] = extract_outputs(out, "global", yr.year);
    }
    return j;
}

} // namespace powerem
