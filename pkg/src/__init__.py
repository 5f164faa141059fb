# SA-INR Source Package
