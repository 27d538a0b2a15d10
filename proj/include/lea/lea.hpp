#pragma once

#include "lea/attribution.hpp"
#include "lea/corpus.hpp"
#include "lea/dump.hpp"
#include "lea/error.hpp"
#include "lea/evaluation.hpp"
#include "lea/filtering.hpp"
#include "lea/io.hpp"
#include "lea/linalg.hpp"
#include "lea/report.hpp"
#include "lea/synth.hpp"
