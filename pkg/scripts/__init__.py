# Cert Relay - Scripts Module
