# Tests package for orojar-lab
