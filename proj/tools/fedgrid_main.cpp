#include "fedgrid/runner.hpp"

int main(int argc, char** argv) { return fedgrid::runner::dispatch(argc, argv); }
