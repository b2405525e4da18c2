#pragma once

#include "crimelab/becker.hpp"
#include "crimelab/concentration.hpp"
#include "crimelab/errors.hpp"
#include "crimelab/ingest.hpp"
#include "crimelab/nonparam.hpp"
#include "crimelab/regress.hpp"
#include "crimelab/specs.hpp"
#include "crimelab/synthlab.hpp"
