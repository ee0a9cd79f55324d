# Cert Relay - Core Module
# 跨子网证书可靠广播核心模块

from .certificate import Certificate, SubnetId, SubnetState, valid_cert
from .ice_frost import SubnetSigner, run_keygen, threshold_sign, verify_signature
from .simnet import SimConfig, run_simulation
from .wcprb import CertificateMessage, TceProcess

__all__ = [
    'Certificate', 'SubnetId', 'SubnetState', 'valid_cert',
    'SubnetSigner', 'run_keygen', 'threshold_sign', 'verify_signature',
    'SimConfig', 'run_simulation',
    'CertificateMessage', 'TceProcess',
]
