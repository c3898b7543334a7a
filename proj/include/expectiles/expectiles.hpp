#pragma once

#include "expectiles/core.hpp"
#include "expectiles/csv.hpp"
#include "expectiles/hjb.hpp"
#include "expectiles/nested.hpp"
#include "expectiles/regression.hpp"
#include "expectiles/risk_measures.hpp"
#include "expectiles/serialization.hpp"
