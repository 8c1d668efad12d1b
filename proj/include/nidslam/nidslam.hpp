#pragma once

#include "nidslam/allocator.hpp"
#include "nidslam/config.hpp"
#include "nidslam/dataset_io.hpp"
#include "nidslam/dynamic_removal.hpp"
#include "nidslam/error.hpp"
#include "nidslam/evaluation.hpp"
#include "nidslam/field.hpp"
#include "nidslam/geometry.hpp"
#include "nidslam/gradcheck.hpp"
#include "nidslam/image.hpp"
#include "nidslam/keyframes.hpp"
#include "nidslam/optimization.hpp"
#include "nidslam/png_io.hpp"
#include "nidslam/renderer.hpp"
#include "nidslam/scene.hpp"
#include "nidslam/slam.hpp"
#include "nidslam/synthetic.hpp"
