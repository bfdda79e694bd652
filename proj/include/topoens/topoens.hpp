#pragma once

#include "topoens/barcode.hpp"
#include "topoens/error.hpp"
#include "topoens/evaluation.hpp"
#include "topoens/graph.hpp"
#include "topoens/json_file.hpp"
#include "topoens/risk.hpp"
#include "topoens/rtd.hpp"
#include "topoens/synth.hpp"
#include "topoens/tensor_io.hpp"
#include "topoens/weights.hpp"
