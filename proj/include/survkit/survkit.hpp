#pragma once

#include "survkit/error.hpp"
#include "survkit/text.hpp"
#include "survkit/cohort.hpp"
#include "survkit/spline.hpp"
#include "survkit/step_function.hpp"
#include "survkit/nonparam.hpp"
#include "survkit/cox.hpp"
#include "survkit/diagnostics.hpp"
#include "survkit/rates.hpp"
#include "survkit/predict.hpp"
#include "survkit/simulate.hpp"
#include "survkit/lint.hpp"
#include "survkit/report.hpp"
