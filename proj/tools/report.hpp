#pragma once

// JSON payloads printed by the ddspseg command line tool. Key order is fixed.

#include <json.hpp>

#include "ddspseg/config.hpp"
#include "ddspseg/gradcheck.hpp"
#include "ddspseg/metrics.hpp"
#include "ddspseg/theory.hpp"
#include "ddspseg/train.hpp"

namespace ddspseg::cli {

using Json = nlohmann::ordered_json;

Json to_json(const metrics::MetricsReport& r);
Json to_json(const gradcheck::Report& r, const gradcheck::Options& opt);
Json to_json(const theory::TheoremReport& r);
Json to_json(const config::KeyValues& kv);

}  // namespace ddspseg::cli
