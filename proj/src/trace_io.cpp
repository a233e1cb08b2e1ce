#include <cmath>
#include <sstream>

#include <json.hpp>

#include "iarqp/driver.hpp"

namespace iarqp
{
    namespace
    {
        nlohmann::json number(double v)
        {
            if (!std::isfinite(v))
                return nullptr;
            return v;
        }
    }

    std::string trace_to_jsonl(const std::vector<IterationRecord>& trace)
    {
        std::ostringstream out;
        for (const auto& r : trace)
        {
            nlohmann::json j;
            j["k"] = r.k;
            j["sigma"] = r.sigma;
            j["sigma_next"] = r.sigma_next;
            j["step_norm"] = r.step_norm;
            j["rho"] = number(r.rho);
            j["success"] = r.success;
            j["dt_bar"] = r.dt_bar;
            j["phi_bar"] = r.phi_bar;
            j["radii"] = r.radii;
            j["budgets"] = r.budgets;
            if (r.events)
                j["events"] = {{"m1", r.events->m1}, {"m2", r.events->m2}, {"m3", r.events->m3}, {"mk", r.events->mk}};
            else
                j["events"] = nullptr;
            j["f_exact_before"] = r.f_exact_before;
            j["f_exact_after"] = number(r.f_exact_after);
            j["f_bar_before"] = number(r.f_bar_before);
            j["f_bar_after"] = number(r.f_bar_after);
            j["tau"] = r.tau;
            j["dt_min"] = r.dt_min;
            j["inner_iterations"] = r.inner_iterations;
            out << j.dump() << '\n';
        }
        return out.str();
    }
}
