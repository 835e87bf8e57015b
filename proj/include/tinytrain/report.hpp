#pragma once

#include <json.hpp>

#include "tinytrain/cost_model.hpp"
#include "tinytrain/fisher.hpp"
#include "tinytrain/plan.hpp"

namespace tinytrain {

nlohmann::json to_json(const Budget& b);
Budget budget_from_json(const nlohmann::json& j);

nlohmann::json to_json(const FisherReport& r);
nlohmann::json to_json(const CostReport& r);

// {source, budgets, channel_ratio, seed, entries: [{layer, channels, bias}], scores, flags}
nlohmann::json to_json(const UpdatePlan& p);
// Accepts hand-written plans: only `entries` is required. Throws ValidationError on bad JSON shapes.
UpdatePlan plan_from_json(const nlohmann::json& j);

}  // namespace tinytrain
