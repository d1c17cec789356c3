#pragma once

#include "patternkv/analysis.hpp"
#include "patternkv/baseline.hpp"
#include "patternkv/compare.hpp"
#include "patternkv/config.hpp"
#include "patternkv/engine.hpp"
#include "patternkv/gate.hpp"
#include "patternkv/patterns.hpp"
#include "patternkv/quant.hpp"
#include "patternkv/report.hpp"
#include "patternkv/snapshot.hpp"
#include "patternkv/synthetic.hpp"
#include "patternkv/trace.hpp"
#include "patternkv/verify.hpp"
