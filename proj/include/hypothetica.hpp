#pragma once

#include "hypothetica/csv.hpp"
#include "hypothetica/design.hpp"
#include "hypothetica/error.hpp"
#include "hypothetica/gformula.hpp"
#include "hypothetica/glm.hpp"
#include "hypothetica/graph.hpp"
#include "hypothetica/ipw.hpp"
#include "hypothetica/mi.hpp"
#include "hypothetica/parallel.hpp"
#include "hypothetica/random.hpp"
#include "hypothetica/registry.hpp"
#include "hypothetica/simulator.hpp"
#include "hypothetica/study.hpp"
#include "hypothetica/trial_data.hpp"
