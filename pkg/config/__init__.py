# Cert Relay - Configuration Module

from .settings import (
    CONFIG_GROUP,
    CONFIG_SAMPLES,
    CONFIG_GOSSIP,
    CONFIG_LATENCY,
    CONFIG_DKG,
    CONFIG_SIGNING,
    CONFIG_WCPRB,
    CONFIG_SIM,
    CONFIG_HARNESS,
    CONFIG_LOGGING,
    SCHEMA_VERSION,
)

__all__ = [
    'CONFIG_GROUP',
    'CONFIG_SAMPLES',
    'CONFIG_GOSSIP',
    'CONFIG_LATENCY',
    'CONFIG_DKG',
    'CONFIG_SIGNING',
    'CONFIG_WCPRB',
    'CONFIG_SIM',
    'CONFIG_HARNESS',
    'CONFIG_LOGGING',
    'SCHEMA_VERSION',
]
